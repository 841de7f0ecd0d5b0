//! Synthetic subjects: envelope-driven EEG from per-channel response
//! kernels plus pink background noise, simulated directly at 64 Hz.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataio::Recording;
use crate::error::{Error, Result};
use crate::sigproc::{bandpass_zero_phase, zscore, Waveform};

pub const SYNTH_RATE_HZ: u32 = 64;
pub const KERNEL_TAPS: usize = 32;
pub const COMPRESSION_EXPONENT: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Linear,
    Nonlinear,
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(Error::invalid(format!(
                "unknown mode '{other}' (expected linear or nonlinear)"
            ))),
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Nonlinear => "nonlinear",
        })
    }
}

/// Signal-to-noise ratio in dB; infinite means no noise at all.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnrDb(pub f64);

impl SnrDb {
    pub const NOISELESS: SnrDb = SnrDb(f64::INFINITY);

    pub fn is_noiseless(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn power_ratio(self) -> f64 {
        10f64.powf(self.0 / 10.0)
    }
}

impl FromStr for SnrDb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim() {
            "inf" | "+inf" | "Inf" | "infinity" => f64::INFINITY,
            t => t
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("SNR '{s}' is not a number or 'inf'")))?,
        };
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("SNR '{s}' is not usable")));
        }
        Ok(SnrDb(v))
    }
}

impl fmt::Display for SnrDb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_noiseless() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for SnrDb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for SnrDb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SnrDb(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub minutes: f64,
    pub snr_db: SnrDb,
    pub mode: SynthMode,
    pub seed: u64,
    pub channels: usize,
    pub drift_ms: f64,
    pub drift_period_s: f64,
    /// The last `holdout` subjects are marked as held out of pooled training.
    pub holdout: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 1,
            minutes: 1.0,
            snr_db: SnrDb::NOISELESS,
            mode: SynthMode::Linear,
            seed: 0,
            channels: 64,
            drift_ms: 30.0,
            drift_period_s: 60.0,
            holdout: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || !(self.minutes > 0.0) || self.channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "need n_subjects ≥ 1, minutes > 0, channels ≥ 1 (got {}, {}, {})",
                self.n_subjects, self.minutes, self.channels
            )));
        }
        if self.holdout >= self.n_subjects && self.holdout > 0 {
            return Err(Error::InvalidConfig(format!(
                "holdout {} leaves no training subjects out of {}",
                self.holdout, self.n_subjects
            )));
        }
        if self.drift_ms < 0.0 || !(self.drift_period_s > 0.0) {
            return Err(Error::InvalidConfig("drift amplitude/period out of range".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.minutes * 60.0 * f64::from(SYNTH_RATE_HZ)).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub delay_ms: f64,
    /// Peak latency per channel: delay plus jitter.
    pub peak_ms: Vec<f64>,
    /// One unit-energy kernel of [`KERNEL_TAPS`] per channel.
    pub kernels: Vec<Vec<f64>>,
    pub nonlinear: bool,
    pub drift_ms: f64,
    pub drift_period_s: f64,
    pub drift_phase: f64,
    pub seed: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Gamma-shaped bump `t^(k-1) e^(-t/θ)` with its mode at `peak`, max 1.
fn gamma_bump(t: f64, peak: f64, shape: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let theta = peak / (shape - 1.0);
    let at = |x: f64| (shape - 1.0) * x.ln() - x / theta;
    (at(t) - at(peak)).exp()
}

/// Width (standard deviation, samples) of the main lobe.
const MAIN_LOBE_SD: f64 = 2.0;

/// Positive lobe peaking at `peak` minus a smaller, wider lobe that only
/// starts at `peak`, so the main peak stays in place.
pub fn difference_of_gammas(peak_samples: f64, taps: usize) -> Vec<f64> {
    // a gamma with shape k and mode p has sd ≈ p/√(k-1) for large k
    let shape = ((peak_samples / MAIN_LOBE_SD).powi(2) + 1.0).max(3.0);
    (0..taps)
        .map(|j| {
            let t = j as f64;
            gamma_bump(t, peak_samples, shape) - 0.35 * gamma_bump(t - peak_samples, 8.0, 4.0)
        })
        .collect()
}

/// Draws a subject: delay uniform in [80, 200] ms, per-channel jitter within
/// ±15 ms, random polarity, unit-energy kernels.
pub fn make_subject_trf(
    subject_id: impl Into<String>,
    seed: u64,
    channels: usize,
    mode: SynthMode,
    drift_ms: f64,
    drift_period_s: f64,
) -> SubjectProfile {
    let mut rng = stream(seed, 0);
    let delay_ms = rng.random_range(80.0..=200.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let mut peak_ms = Vec::with_capacity(channels);
    let mut kernels = Vec::with_capacity(channels);
    for _ in 0..channels {
        let peak = delay_ms + rng.random_range(-15.0..=15.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut k = difference_of_gammas(peak * f64::from(SYNTH_RATE_HZ) / 1000.0, KERNEL_TAPS);
        let energy = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        k.iter_mut().for_each(|v| *v *= sign / energy);
        peak_ms.push(peak);
        kernels.push(k);
    }
    SubjectProfile {
        subject_id: subject_id.into(),
        delay_ms,
        peak_ms,
        kernels,
        nonlinear: mode == SynthMode::Nonlinear,
        drift_ms,
        drift_period_s,
        drift_phase,
        seed,
    }
}

/// Rectified 0.5–10 Hz band-limited Gaussian noise, z-scored and shifted to
/// a minimum of zero.
pub fn synth_envelope(duration_s: f64, seed: u64) -> Result<Waveform> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    let fs = f64::from(SYNTH_RATE_HZ);
    let n = (duration_s * fs).round() as usize;
    if n < 2 {
        return Err(Error::invalid("duration shorter than two samples"));
    }
    let mut rng = stream(seed, 1);
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let band = bandpass_zero_phase(&Waveform::new(white, fs)?, 0.5, 10.0)?;
    let rect: Vec<f64> = band.samples().iter().map(|v| v.abs()).collect();
    let z = zscore(&rect);
    let min = z.iter().copied().fold(f64::INFINITY, f64::min);
    Waveform::new(z.into_iter().map(|v| v - min).collect(), fs)
}

/// Gaussian noise with power spectral density ∝ 1/f, zero mean, unit variance.
pub fn pink_noise(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 64 {
        return Err(Error::invalid(format!("pink noise needs n ≥ 64, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(x.into_iter().map(|v| (v - mean) / sd).collect())
}

/// Causal convolution truncated to the input length.
pub fn convolve_causal(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .take(t + 1)
                .map(|(j, k)| k * x[t - j])
                .sum()
        })
        .collect()
}

/// Compressive power plus slowly drifting latency, by linear interpolation.
fn nonlinear_drive(env: &[f64], profile: &SubjectProfile) -> Vec<f64> {
    let fs = f64::from(SYNTH_RATE_HZ);
    let u: Vec<f64> = env.iter().map(|v| v.max(0.0).powf(COMPRESSION_EXPONENT)).collect();
    let amp = profile.drift_ms * fs / 1000.0;
    let omega = 2.0 * PI / (profile.drift_period_s * fs);
    (0..u.len())
        .map(|t| {
            let pos = t as f64 - amp * (omega * t as f64 + profile.drift_phase).sin();
            if pos <= 0.0 {
                return if pos > -1.0 { u[0] * (1.0 + pos) } else { 0.0 };
            }
            let i = pos.floor() as usize;
            if i + 1 >= u.len() {
                return u[u.len() - 1];
            }
            let frac = pos - i as f64;
            u[i] * (1.0 - frac) + u[i + 1] * frac
        })
        .collect()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Scaled response and noise per channel; EEG is their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParts {
    pub signal: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

impl SynthParts {
    pub fn eeg(&self) -> Vec<Vec<f64>> {
        self.signal
            .iter()
            .zip(&self.noise)
            .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + b).collect())
            .collect()
    }
}

pub fn synth_parts(
    envelope: &Waveform,
    profile: &SubjectProfile,
    snr_db: SnrDb,
    noise_seed: u64,
) -> Result<SynthParts> {
    if envelope.sample_rate_hz() != f64::from(SYNTH_RATE_HZ) {
        return Err(Error::invalid(format!(
            "envelope must be at {SYNTH_RATE_HZ} Hz, got {}",
            envelope.sample_rate_hz()
        )));
    }
    let drive = if profile.nonlinear {
        nonlinear_drive(envelope.samples(), profile)
    } else {
        envelope.samples().to_vec()
    };
    let n = drive.len();
    let mut signal = Vec::with_capacity(profile.kernels.len());
    let mut noise = Vec::with_capacity(profile.kernels.len());
    for (c, kernel) in profile.kernels.iter().enumerate() {
        let s = convolve_causal(&drive, kernel);
        let vs = variance(&s);
        if !(vs > 0.0) {
            return Err(Error::invalid(format!(
                "channel {c} response has zero variance; cannot set an SNR"
            )));
        }
        if snr_db.is_noiseless() {
            signal.push(s);
            noise.push(vec![0.0; n]);
        } else {
            let nz = pink_noise(n, noise_seed.wrapping_add(c as u64))?;
            let gain = (snr_db.power_ratio() * variance(&nz) / vs).sqrt();
            signal.push(s.into_iter().map(|v| v * gain).collect());
            noise.push(nz);
        }
    }
    Ok(SynthParts { signal, noise })
}

/// Unnormalized recording: `conv(f(env), kernel)·g + noise` per channel.
pub fn synth_recording(
    envelope: &Waveform,
    profile: &SubjectProfile,
    snr_db: SnrDb,
    recording_id: &str,
    noise_seed: u64,
) -> Result<Recording> {
    let parts = synth_parts(envelope, profile, snr_db, noise_seed)?;
    Recording::from_channels(
        profile.subject_id.clone(),
        recording_id,
        SYNTH_RATE_HZ,
        &parts.eeg(),
        envelope.samples(),
    )
}

pub fn subject_name(index: usize) -> String {
    format!("s{:02}", index + 1)
}

/// Profile, envelope, and parts of subject `index`, seeded `seed + index`.
pub fn synth_subject_parts(
    cfg: &SynthConfig,
    index: usize,
) -> Result<(SubjectProfile, Waveform, SynthParts)> {
    cfg.validate()?;
    let seed = cfg.seed.wrapping_add(index as u64);
    let profile = make_subject_trf(
        subject_name(index),
        seed,
        cfg.channels,
        cfg.mode,
        cfg.drift_ms,
        cfg.drift_period_s,
    );
    let env = synth_envelope(cfg.minutes * 60.0, seed)?;
    let noise_seed = stream(seed, 2).random::<u64>();
    let parts = synth_parts(&env, &profile, cfg.snr_db, noise_seed)?;
    Ok((profile, env, parts))
}

/// One z-scored recording per subject plus its holdout flag.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<(Recording, bool)>> {
    cfg.validate()?;
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| {
            let (profile, env, parts) = synth_subject_parts(cfg, i)?;
            let rec = Recording::from_channels(
                profile.subject_id,
                "r01",
                SYNTH_RATE_HZ,
                &parts.eeg(),
                env.samples(),
            )?;
            Ok((rec.normalized(), i >= cfg.n_subjects - cfg.holdout))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodogram(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf[..n / 2 + 1].iter().map(|c| c.norm_sqr() / n as f64).collect()
    }

    #[test]
    fn envelope_shape() {
        let w = synth_envelope(60.0, 3).unwrap();
        assert_eq!(w.len(), 3840);
        assert!(w.samples().iter().all(|v| *v >= 0.0));
        assert_eq!(w.samples().iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        let mean = w.samples().iter().sum::<f64>() / 3840.0;
        let centered: Vec<f64> = w.samples().iter().map(|v| v - mean).collect();
        let p = periodogram(&centered);
        let cut = (10.0 * 3840.0 / 64.0) as usize;
        let below: f64 = p[..=cut].iter().sum();
        let total: f64 = p.iter().sum();
        assert!(below / total >= 0.6, "{}", below / total);
        assert_eq!(synth_envelope(60.0, 3).unwrap(), w);
        assert!(synth_envelope(0.0, 3).is_err());
    }

    #[test]
    fn profile_properties() {
        for seed in 0..200 {
            let p = make_subject_trf("s", seed, 64, SynthMode::Linear, 30.0, 60.0);
            assert!((80.0..=200.0).contains(&p.delay_ms));
            for (k, peak) in p.kernels.iter().zip(&p.peak_ms) {
                assert!((peak - p.delay_ms).abs() <= 15.0);
                let energy: f64 = k.iter().map(|v| v * v).sum();
                assert!((energy - 1.0).abs() < 1e-12);
                let argmax = (0..k.len()).max_by(|&a, &b| k[a].abs().total_cmp(&k[b].abs())).unwrap();
                let expected = (peak * 64.0 / 1000.0).round() as i64;
                assert!((argmax as i64 - expected).abs() <= 1, "seed {seed}: {argmax} vs {expected}");
            }
        }
        let a = make_subject_trf("s", 5, 8, SynthMode::Nonlinear, 30.0, 60.0);
        assert_eq!(a, make_subject_trf("s", 5, 8, SynthMode::Nonlinear, 30.0, 60.0));
        let b = make_subject_trf("s", 5, 64, SynthMode::Linear, 30.0, 60.0);
        let positive = b.kernels.iter().filter(|k| k.iter().sum::<f64>() > 0.0).count();
        assert!(positive > 0 && positive < 64);
    }

    #[test]
    fn pink_noise_statistics() {
        let n = 64 * 600;
        let x = pink_noise(n, 1).unwrap();
        assert!((variance(&x) - 1.0).abs() < 0.05);
        assert_eq!(x, pink_noise(n, 1).unwrap());
        // least-squares slope of log power against log frequency over 1–20 Hz
        let p = periodogram(&x);
        let df = 64.0 / n as f64;
        let pts: Vec<(f64, f64)> = (1..p.len())
            .map(|k| (k as f64 * df, p[k]))
            .filter(|(f, _)| (1.0..=20.0).contains(f))
            .map(|(f, v)| (f.ln(), v.ln()))
            .collect();
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / m, sy / m);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() <= 0.3, "slope {slope}");
        assert!(pink_noise(63, 0).is_err());
    }

    #[test]
    fn noiseless_linear_is_pure_convolution() {
        let env = synth_envelope(30.0, 2).unwrap();
        let p = make_subject_trf("s01", 2, 4, SynthMode::Linear, 30.0, 60.0);
        let rec = synth_recording(&env, &p, SnrDb::NOISELESS, "r01", 9).unwrap();
        for c in 0..4 {
            let conv = convolve_causal(env.samples(), &p.kernels[c]);
            let expect: Vec<f32> = conv.iter().map(|v| *v as f32).collect();
            assert_eq!(rec.channel(c), &expect[..]);
        }
    }

    #[test]
    fn zero_envelope_rejected() {
        let env = Waveform::new(vec![0.0; 640], 64.0).unwrap();
        let p = make_subject_trf("s01", 2, 2, SynthMode::Linear, 30.0, 60.0);
        assert!(synth_recording(&env, &p, SnrDb::NOISELESS, "r", 0).is_err());
        assert!(synth_recording(&env, &p, SnrDb(0.0), "r", 0).is_err());
    }

    #[test]
    fn snr_calibration() {
        let cfg = SynthConfig {
            minutes: 1.0,
            snr_db: SnrDb(0.0),
            channels: 6,
            mode: SynthMode::Nonlinear,
            ..Default::default()
        };
        let (_, _, parts) = synth_subject_parts(&cfg, 0).unwrap();
        for (s, n) in parts.signal.iter().zip(&parts.noise) {
            let r = variance(s) / variance(n);
            assert!((r - 1.0).abs() < 0.02, "{r}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_subjects: 2,
            minutes: 0.5,
            snr_db: SnrDb(5.0),
            channels: 4,
            holdout: 1,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a[0].0.n_samples(), 1920);
        assert_eq!((a[0].1, a[1].1), (false, true));
        assert_ne!(a[0].0.eeg(), a[1].0.eeg());
    }

    #[test]
    fn snr_parsing() {
        assert!("inf".parse::<SnrDb>().unwrap().is_noiseless());
        assert_eq!("-3.5".parse::<SnrDb>().unwrap(), SnrDb(-3.5));
        assert!("loud".parse::<SnrDb>().is_err());
        let json = serde_json::to_string(&SnrDb::NOISELESS).unwrap();
        assert_eq!(json, "\"inf\"");
        assert_eq!(serde_json::from_str::<SnrDb>("2.0").unwrap(), SnrDb(2.0));
        assert!("nonlinear".parse::<SynthMode>().is_ok());
        assert!("quadratic".parse::<SynthMode>().is_err());
    }
}
