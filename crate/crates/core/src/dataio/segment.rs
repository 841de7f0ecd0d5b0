//! Windowing and match/mismatch pair construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Recording;
use crate::error::{Error, Result};
use crate::model::Label;
use crate::ndcore::Tensor;
use crate::sigproc::{split_recording, Span, Split};

/// Windowing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub window_s: f64,
    pub overlap: f64,
    /// Distance between a matched envelope interval and its mismatched partner.
    pub mismatch_gap_s: f64,
    /// Seeds the mismatch side choices.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            overlap: 0.9,
            mismatch_gap_s: 1.0,
            seed: 0,
        }
    }
}

/// Sample counts derived from a [`DataConfig`] at one sampling rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Windowing {
    pub window: usize,
    pub hop: usize,
    pub gap: usize,
}

impl DataConfig {
    pub fn windowing(&self, sample_rate_hz: u32) -> Result<Windowing> {
        let fs = f64::from(sample_rate_hz);
        if !(self.window_s > 0.0) || !(0.0..1.0).contains(&self.overlap) || self.mismatch_gap_s < 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "window_s {} / overlap {} / mismatch_gap_s {} out of range",
                self.window_s, self.overlap, self.mismatch_gap_s
            )));
        }
        let window = (self.window_s * fs).round() as usize;
        let hop = (window as f64 * (1.0 - self.overlap)).round() as usize;
        if window == 0 || hop == 0 {
            return Err(Error::InvalidConfig(format!(
                "window of {window} samples with hop {hop}"
            )));
        }
        Ok(Windowing {
            window,
            hop,
            gap: (self.mismatch_gap_s * fs).round() as usize,
        })
    }
}

/// Start indices `0, hop, 2·hop, …` of windows that fit in `n` samples.
pub fn window_starts(n: usize, window: usize, hop: usize) -> Vec<usize> {
    assert!(hop > 0, "hop must be positive");
    if window == 0 || n < window {
        return Vec::new();
    }
    (0..=n - window).step_by(hop).collect()
}

/// Window starts inside `span`, in recording coordinates.
pub fn segment(span: Span, window: usize, hop: usize) -> Vec<usize> {
    window_starts(span.len(), window, hop)
        .into_iter()
        .map(|s| s + span.start)
        .collect()
}

/// Envelope start of the mismatched partner of the window at `eeg_start`:
/// either `gap` samples after its end or ending `gap` samples before its
/// start, uniformly among the candidates inside `[0, n)`.
pub fn sample_mismatch<R: Rng>(
    n: usize,
    eeg_start: usize,
    window: usize,
    gap: usize,
    rng: &mut R,
) -> Option<usize> {
    let after = eeg_start + window + gap;
    let after = (after + window <= n).then_some(after);
    let before = eeg_start.checked_sub(gap + window);
    match (after, before) {
        (Some(a), Some(b)) => Some(if rng.random_bool(0.5) { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// One (EEG window, envelope window) pair by reference into a recording list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub recording: usize,
    pub eeg_start: usize,
    pub env_start: usize,
    pub label: Label,
}

/// Materialized pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair {
    pub eeg_window: Tensor,
    pub env_window: Tensor,
    pub label: Label,
    pub recording_id: String,
    pub eeg_start: usize,
    pub env_start: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSegments {
    pub train: Vec<SegmentRef>,
    pub validation: Vec<SegmentRef>,
    pub test: Vec<SegmentRef>,
    /// Windows whose mismatched partner did not fit in the recording.
    pub skipped_negatives: usize,
}

impl SplitSegments {
    pub fn get(&self, split: Split) -> &[SegmentRef] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<SegmentRef> {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

/// Positive for every window of every split range plus one negative each
/// where the partner fits. Windows never cross a split boundary.
pub fn build_dataset(recordings: &[Recording], cfg: &DataConfig) -> Result<SplitSegments> {
    let mut out = SplitSegments::default();
    for (ri, rec) in recordings.iter().enumerate() {
        let w = cfg.windowing(rec.sample_rate_hz())?;
        if rec.n_samples() < 10 {
            continue;
        }
        let spec = split_recording(rec.n_samples())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(ri as u64);
        for split in [Split::Train, Split::Validation, Split::Test] {
            for span in spec.spans(split) {
                for start in segment(span, w.window, w.hop) {
                    let dst = out.get_mut(split);
                    dst.push(SegmentRef {
                        recording: ri,
                        eeg_start: start,
                        env_start: start,
                        label: Label::Matched,
                    });
                    match sample_mismatch(rec.n_samples(), start, w.window, w.gap, &mut rng) {
                        Some(env_start) => dst.push(SegmentRef {
                            recording: ri,
                            eeg_start: start,
                            env_start,
                            label: Label::Mismatched,
                        }),
                        None => out.skipped_negatives += 1,
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A [`SegmentRef`] resolved against its recording.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    pub recording: &'a Recording,
    pub eeg_start: usize,
    pub env_start: usize,
    pub window: usize,
    pub label: Label,
}

impl<'a> SegmentView<'a> {
    pub fn new(recordings: &'a [Recording], seg: &SegmentRef, window: usize) -> Self {
        Self {
            recording: &recordings[seg.recording],
            eeg_start: seg.eeg_start,
            env_start: seg.env_start,
            window,
            label: seg.label,
        }
    }

    pub fn eeg(&self) -> Result<Tensor> {
        self.recording.eeg_window(self.eeg_start, self.window)
    }

    pub fn env(&self) -> Result<Tensor> {
        self.recording.env_window(self.env_start, self.window)
    }

    pub fn materialize(&self) -> Result<SegmentPair> {
        Ok(SegmentPair {
            eeg_window: self.eeg()?,
            env_window: self.env()?,
            label: self.label,
            recording_id: self.recording.recording_id().to_string(),
            eeg_start: self.eeg_start,
            env_start: self.env_start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_recording(n: usize) -> Recording {
        Recording::new("s", "r", 64, 1, vec![0.0; n], vec![0.0; n]).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(55_680, 640, 64).len(), 861);
        assert_eq!(window_starts(640, 640, 64), vec![0]);
        assert_eq!(window_starts(55_680, 320, 32).len(), 1_731);
        assert!(window_starts(639, 640, 64).is_empty());
    }

    #[test]
    fn default_windowing_at_64_hz() {
        let w = DataConfig::default().windowing(64).unwrap();
        assert_eq!((w.window, w.hop, w.gap), (640, 64, 64));
        let half = DataConfig {
            window_s: 5.0,
            ..Default::default()
        };
        assert_eq!(half.windowing(64).unwrap().hop, 32);
    }

    #[test]
    fn mismatch_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_mismatch(55_680, 0, 640, 64, &mut rng), Some(704));
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            seen.insert(sample_mismatch(55_680, 704, 640, 64, &mut rng).unwrap());
        }
        assert_eq!(seen, [0usize, 1408].into_iter().collect());
        assert_eq!(sample_mismatch(640, 0, 640, 64, &mut rng), None);
    }

    #[test]
    fn balance_and_skips() {
        let recs = vec![flat_recording(55_680)];
        let ds = build_dataset(&recs, &DataConfig::default()).unwrap();
        let all: Vec<_> = ds.train.iter().chain(&ds.validation).chain(&ds.test).collect();
        let pos = all.iter().filter(|s| s.label == Label::Matched).count();
        let neg = all.len() - pos;
        assert!(pos <= 861);
        assert_eq!(pos - neg, ds.skipped_negatives);
    }

    #[test]
    fn same_seed_same_negatives() {
        let recs = vec![flat_recording(9_000), flat_recording(7_000)];
        let cfg = DataConfig::default();
        assert_eq!(build_dataset(&recs, &cfg).unwrap(), build_dataset(&recs, &cfg).unwrap());
        let other = DataConfig { seed: 5, ..cfg.clone() };
        assert_ne!(build_dataset(&recs, &cfg).unwrap(), build_dataset(&recs, &other).unwrap());
    }

    #[test]
    fn no_eeg_leakage_and_exact_gap() {
        let recs = vec![flat_recording(20_000)];
        let ds = build_dataset(&recs, &DataConfig::default()).unwrap();
        let spec = split_recording(20_000).unwrap();
        for seg in ds.validation.iter().chain(&ds.test) {
            for tr in spec.train {
                assert!(seg.eeg_start + 640 <= tr.start || seg.eeg_start >= tr.end);
            }
        }
        for seg in ds.train.iter().chain(&ds.validation).chain(&ds.test) {
            if seg.label == Label::Mismatched {
                let gap = if seg.env_start > seg.eeg_start {
                    seg.env_start - (seg.eeg_start + 640)
                } else {
                    seg.eeg_start - (seg.env_start + 640)
                };
                assert_eq!(gap, 64);
            } else {
                assert_eq!(seg.env_start, seg.eeg_start);
            }
        }
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 1usize..400, window in 1usize..100, hop in 1usize..50) {
            let starts = window_starts(n, window, hop);
            let expected = if n >= window { (n - window) / hop + 1 } else { 0 };
            prop_assert_eq!(starts.len(), expected);
            prop_assert!(starts.iter().all(|s| s + window <= n));
        }
    }
}
