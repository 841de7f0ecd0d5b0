//! Stimulus envelope extraction and EEG conditioning.

mod filter;
mod gammatone;
mod pipeline;

use serde::{Deserialize, Serialize};

pub use filter::{bandpass_zero_phase, decimate, filtfilt, Biquad};
pub use pipeline::{condition, preprocess, read_wav_mono, EEG_BAND_HZ, TARGET_RATE_HZ};
pub use gammatone::{
    erb_bandwidth, erb_number, erb_space, extract_envelope, extract_envelope_with, EnvelopeConfig,
};

use crate::error::{Error, Result};

/// Mono signal with its sampling rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// `(x − mean)/std` with the population standard deviation; all zeros when
/// the standard deviation is below 1e-12.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Half-open sample range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

/// Train = first and last 40 %, then validation and test share the middle 20 %.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: [Span; 2],
    pub validation: Span,
    pub test: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl SplitSpec {
    pub fn spans(&self, split: Split) -> Vec<Span> {
        match split {
            Split::Train => self.train.to_vec(),
            Split::Validation => vec![self.validation],
            Split::Test => vec![self.test],
        }
    }
}

pub fn split_recording(n_samples: usize) -> Result<SplitSpec> {
    if n_samples < 10 {
        return Err(Error::invalid(format!(
            "recording of {n_samples} samples is too short to split"
        )));
    }
    let at = |tenths: usize| n_samples * tenths / 10;
    let (a, b, c) = (at(4), at(5), at(6));
    Ok(SplitSpec {
        train: [Span::new(0, a), Span::new(c, n_samples)],
        validation: Span::new(a, b),
        test: Span::new(b, c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zscore_reference() {
        let z = zscore(&[1.0, 2.0, 3.0]);
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expected).abs() < 1e-12 && z[1].abs() < 1e-15);
        assert!((z[2] - expected).abs() < 1e-12);
        assert!((z[2] - 1.2247).abs() < 1e-4);
        assert_eq!(zscore(&[4.0; 7]), vec![0.0; 7]);
    }

    #[test]
    fn split_reference_cases() {
        let s = split_recording(55_680).unwrap();
        assert_eq!(s.train, [Span::new(0, 22_272), Span::new(33_408, 55_680)]);
        assert_eq!(s.validation, Span::new(22_272, 27_840));
        assert_eq!(s.test, Span::new(27_840, 33_408));

        let s = split_recording(10).unwrap();
        assert_eq!(s.train, [Span::new(0, 4), Span::new(6, 10)]);
        assert_eq!(s.validation, Span::new(4, 5));
        assert_eq!(s.test, Span::new(5, 6));
        assert!(split_recording(9).is_err());
    }

    proptest! {
        #[test]
        fn zscore_moments(xs in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let z = zscore(&xs);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!(var == 0.0 || (var - 1.0).abs() < 1e-9);
        }

        #[test]
        fn split_partitions(n in 10usize..2_000_000) {
            let s = split_recording(n).unwrap();
            let ordered = [s.train[0], s.validation, s.test, s.train[1]];
            prop_assert_eq!(ordered[0].start, 0);
            prop_assert_eq!(ordered[3].end, n);
            for w in ordered.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            prop_assert!(s.validation.end <= s.test.start);
            prop_assert_eq!(s.train[0].end, n * 4 / 10);
            prop_assert_eq!(s.test.end, n * 6 / 10);
        }
    }
}
