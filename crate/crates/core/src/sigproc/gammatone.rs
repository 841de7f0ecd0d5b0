//! Gammatone filterbank envelope ("power-law subbands").

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub bands: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub exponent: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            bands: 28,
            low_hz: 50.0,
            high_hz: 5000.0,
            exponent: 0.6,
        }
    }
}

/// Equivalent rectangular bandwidth in Hz at `f` Hz.
pub fn erb_bandwidth(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-number of `f` Hz.
pub fn erb_number(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_number_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Center frequencies equally spaced on the ERB-number scale, both ends included.
pub fn erb_space(low: f64, high: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![low];
    }
    let (lo, hi) = (erb_number(low), erb_number(high));
    (0..n)
        .map(|i| erb_number_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Magnitude of a 4th-order complex gammatone channel (cascade of four
/// complex one-pole sections on the demodulated signal).
fn subband_magnitude(x: &[f64], fc: f64, fs: f64) -> Vec<f64> {
    let a = (-2.0 * PI * 1.019 * erb_bandwidth(fc) / fs).exp();
    let gain = 1.0 - a;
    let mut state = [(0.0f64, 0.0f64); 4];
    let step = fc / fs;
    x.iter()
        .enumerate()
        .map(|(n, &v)| {
            let phase = 2.0 * PI * (step * n as f64).fract();
            let (s, c) = phase.sin_cos();
            // x·e^{-jφ}
            let mut re = v * c;
            let mut im = -v * s;
            for st in state.iter_mut() {
                st.0 = gain * re + a * st.0;
                st.1 = gain * im + a * st.1;
                re = st.0;
                im = st.1;
            }
            re.hypot(im)
        })
        .collect()
}

/// Envelope at the audio rate: per-band magnitude raised to `exponent`,
/// averaged across bands.
pub fn extract_envelope_with(audio: &Waveform, cfg: &EnvelopeConfig) -> Result<Waveform> {
    let fs = audio.sample_rate_hz();
    if fs < 8000.0 {
        return Err(Error::invalid(format!(
            "audio sample rate {fs} Hz is below 8000 Hz"
        )));
    }
    if cfg.bands == 0 || !(cfg.low_hz > 0.0 && cfg.low_hz < cfg.high_hz && cfg.high_hz < fs / 2.0)
    {
        return Err(Error::InvalidConfig(format!(
            "invalid filterbank {}..{} Hz with {} bands at {fs} Hz",
            cfg.low_hz, cfg.high_hz, cfg.bands
        )));
    }
    let mut env = vec![0.0; audio.len()];
    for fc in erb_space(cfg.low_hz, cfg.high_hz, cfg.bands) {
        for (e, m) in env.iter_mut().zip(subband_magnitude(audio.samples(), fc, fs)) {
            *e += m.powf(cfg.exponent);
        }
    }
    let scale = 1.0 / cfg.bands as f64;
    env.iter_mut().for_each(|e| *e *= scale);
    Waveform::new(env, fs)
}

pub fn extract_envelope(audio: &Waveform) -> Result<Waveform> {
    extract_envelope_with(audio, &EnvelopeConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn erb_spacing_endpoints() {
        let c = erb_space(50.0, 5000.0, 28);
        assert_eq!(c.len(), 28);
        assert!((c[0] - 50.0).abs() < 1e-9 && (c[27] - 5000.0).abs() < 1e-6);
        let steps: Vec<f64> = c.windows(2).map(|w| erb_number(w[1]) - erb_number(w[0])).collect();
        for s in &steps {
            assert!((s - steps[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_gives_zero_envelope() {
        let env = extract_envelope(&Waveform::new(vec![0.0; 1000], 16000.0).unwrap()).unwrap();
        assert!(env.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn power_law_homogeneity() {
        let x = noise(4000, 1);
        let base = extract_envelope(&Waveform::new(x.clone(), 16000.0).unwrap()).unwrap();
        let factor = 2f64.powf(0.6);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let env2 = extract_envelope(&Waveform::new(doubled, 16000.0).unwrap()).unwrap();
        for (a, b) in base.samples().iter().zip(env2.samples()) {
            assert!(*a >= 0.0);
            if *a > 0.0 {
                assert!((b / (factor * a) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_tone_envelope_is_flat() {
        let fs = 16000.0;
        let x: Vec<f64> = (0..16000)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / fs).sin())
            .collect();
        let env = extract_envelope(&Waveform::new(x, fs).unwrap()).unwrap();
        let steady = &env.samples()[4000..];
        let mean = steady.iter().sum::<f64>() / steady.len() as f64;
        let var = steady.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / steady.len() as f64;
        let cv = var.sqrt() / mean;
        assert!(cv < 0.05, "coefficient of variation {cv}");
    }

    #[test]
    fn low_rate_audio_rejected() {
        assert!(extract_envelope(&Waveform::new(vec![0.0; 10], 4000.0).unwrap()).is_err());
    }
}
