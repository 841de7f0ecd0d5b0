use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::sigproc::zscore;

/// Synchronized multichannel EEG and stimulus envelope.
///
/// Samples are stored as `f32` (the container precision), EEG channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    subject_id: String,
    recording_id: String,
    sample_rate_hz: u32,
    n_channels: usize,
    eeg: Vec<f32>,
    envelope: Vec<f32>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        recording_id: impl Into<String>,
        sample_rate_hz: u32,
        n_channels: usize,
        eeg: Vec<f32>,
        envelope: Vec<f32>,
    ) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if n_channels == 0 {
            return Err(Error::invalid("recording needs at least one EEG channel"));
        }
        if eeg.len() != n_channels * envelope.len() {
            return Err(Error::invalid(format!(
                "EEG holds {} values, expected {} channels × {} samples",
                eeg.len(),
                n_channels,
                envelope.len()
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            recording_id: recording_id.into(),
            sample_rate_hz,
            n_channels,
            eeg,
            envelope,
        })
    }

    /// Builds from `f64` rows (one per channel), rounding to `f32`.
    pub fn from_channels(
        subject_id: impl Into<String>,
        recording_id: impl Into<String>,
        sample_rate_hz: u32,
        channels: &[Vec<f64>],
        envelope: &[f64],
    ) -> Result<Self> {
        if let Some(c) = channels.iter().position(|c| c.len() != envelope.len()) {
            return Err(Error::invalid(format!(
                "channel {c} length differs from envelope length {}",
                envelope.len()
            )));
        }
        let eeg = channels.iter().flatten().map(|&v| v as f32).collect();
        let env = envelope.iter().map(|&v| v as f32).collect();
        Self::new(subject_id, recording_id, sample_rate_hz, channels.len(), eeg, env)
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.envelope.len()
    }

    pub fn eeg(&self) -> &[f32] {
        &self.eeg
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_samples();
        &self.eeg[c * n..(c + 1) * n]
    }

    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.channel(c).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn envelope(&self) -> &[f32] {
        &self.envelope
    }

    pub fn envelope_f64(&self) -> Vec<f64> {
        self.envelope.iter().map(|&v| f64::from(v)).collect()
    }

    /// `[channels × len]` EEG window starting at `start`.
    pub fn eeg_window(&self, start: usize, len: usize) -> Result<Tensor> {
        self.check_window(start, len)?;
        let data = (0..self.n_channels)
            .flat_map(|c| self.channel(c)[start..start + len].iter().map(|&v| f64::from(v)))
            .collect();
        Tensor::new(vec![self.n_channels, len], data)
    }

    /// `[1 × len]` envelope window starting at `start`.
    pub fn env_window(&self, start: usize, len: usize) -> Result<Tensor> {
        self.check_window(start, len)?;
        let data = self.envelope[start..start + len]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        Tensor::new(vec![1, len], data)
    }

    fn check_window(&self, start: usize, len: usize) -> Result<()> {
        if len == 0 || start + len > self.n_samples() {
            return Err(Error::invalid(format!(
                "window [{start}, {}) outside recording of {} samples",
                start + len,
                self.n_samples()
            )));
        }
        Ok(())
    }

    /// Z-scores every EEG channel and the envelope.
    pub fn normalized(&self) -> Self {
        let eeg = (0..self.n_channels)
            .flat_map(|c| zscore(&self.channel_f64(c)))
            .map(|v| v as f32)
            .collect();
        let envelope = zscore(&self.envelope_f64())
            .into_iter()
            .map(|v| v as f32)
            .collect();
        Self {
            eeg,
            envelope,
            ..self.clone()
        }
    }
}
