//! Second-order sections, zero-phase filtering, decimation.

use super::Waveform;
use crate::error::{Error, Result};

/// Normalized biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth low-pass (bilinear, prewarped at `fc`).
    pub fn butter_lowpass(fc: f64, fs: f64) -> Self {
        let k = (std::f64::consts::PI * fc / fs).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [
                2.0 * (k * k - 1.0) * norm,
                (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm,
            ],
        }
    }

    /// Second-order Butterworth high-pass (bilinear, prewarped at `fc`).
    pub fn butter_highpass(fc: f64, fs: f64) -> Self {
        let k = (std::f64::consts::PI * fc / fs).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [
                2.0 * (k * k - 1.0) * norm,
                (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm,
            ],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state that is stationary for a constant input `v`.
    fn steady_state(&self, v: f64) -> [f64; 2] {
        let y = self.dc_gain() * v;
        [y - self.b[0] * v, self.b[2] * v - self.a[1] * y]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let ([b0, b1, b2], [a1, a2]) = (self.b, self.a);
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade applied forward, then backward (squared magnitude, zero phase).
///
/// Edges are extended by odd reflection and every section starts from its
/// steady state for the first sample, which keeps start-up transients small.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let cascade = |buf: &mut [f64]| {
        let mut v = buf[0];
        for s in sections {
            let z = s.steady_state(v);
            s.run(buf, z);
            v *= s.dc_gain();
        }
    };
    cascade(&mut ext);
    ext.reverse();
    cascade(&mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// 4th-order zero-phase band-pass: Butterworth high-pass at `lo` and
/// low-pass at `hi`, each second order, run forward and backward.
pub fn bandpass_zero_phase(x: &Waveform, lo: f64, hi: f64) -> Result<Waveform> {
    let fs = x.sample_rate_hz();
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < lo < hi, got {lo}..{hi}"
        )));
    }
    if hi >= fs / 2.0 {
        return Err(Error::invalid(format!(
            "upper edge {hi} Hz must be below Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    let sections = [Biquad::butter_highpass(lo, fs), Biquad::butter_lowpass(hi, fs)];
    Waveform::new(filtfilt(&sections, x.samples()), fs)
}

/// Keeps every `factor`-th sample starting at index 0.
///
/// The caller is responsible for band-limiting first.
pub fn decimate(x: &Waveform, factor: usize) -> Result<Waveform> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be positive"));
    }
    let fs = x.sample_rate_hz();
    let new_rate = fs / factor as f64;
    if fs.fract() != 0.0 || new_rate.fract() != 0.0 {
        return Err(Error::invalid(format!(
            "sample rate {fs} Hz is not divisible by {factor}"
        )));
    }
    let samples = x.samples().iter().step_by(factor).copied().collect();
    Waveform::new(samples, new_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect(),
            fs,
        )
        .unwrap()
    }

    fn steady_peak(x: &[f64]) -> f64 {
        let trim = x.len() / 5;
        x[trim..x.len() - trim]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn dc_is_removed() {
        let x = Waveform::new(vec![3.5; 4096], 512.0).unwrap();
        let y = bandpass_zero_phase(&x, 0.5, 32.0).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(steady_peak(y.samples()) < 1e-3 * 3.5);
    }

    #[test]
    fn passband_gain() {
        let y = bandpass_zero_phase(&sine(10.0, 512.0, 8192), 0.5, 32.0).unwrap();
        let gain = steady_peak(y.samples());
        assert!((0.9..=1.0).contains(&gain), "{gain}");
    }

    #[test]
    fn stopband_gain() {
        let y = bandpass_zero_phase(&sine(100.0, 512.0, 8192), 0.5, 32.0).unwrap();
        let gain = steady_peak(y.samples());
        assert!(gain < 0.01, "{gain}");
    }

    #[test]
    fn upper_edge_at_nyquist_rejected() {
        let x = Waveform::new(vec![0.0; 100], 64.0).unwrap();
        assert!(bandpass_zero_phase(&x, 0.5, 32.0).is_err());
        assert!(bandpass_zero_phase(&x, 0.5, 31.0).is_ok());
    }

    #[test]
    fn symmetric_pulse_stays_centered() {
        let n = 1001;
        let center = 500;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let d = (i as f64 - center as f64) / 6.0;
                (-d * d).exp()
            })
            .collect();
        let y = bandpass_zero_phase(&Waveform::new(x, 256.0).unwrap(), 0.5, 32.0).unwrap();
        let peak = y
            .samples()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(peak.abs_diff(center) <= 1, "peak at {peak}");
    }

    #[test]
    fn decimation() {
        let x = Waveform::new((0..16).map(f64::from).collect(), 8000.0).unwrap();
        let y = decimate(&x, 125).unwrap();
        assert_eq!(y.sample_rate_hz(), 64.0);
        assert_eq!(y.samples(), &[0.0]);
        assert_eq!(decimate(&x, 1).unwrap(), x);
        assert!(decimate(&x, 3).is_err());
        let y = decimate(&x, 4).unwrap();
        assert_eq!(y.samples(), &[0.0, 4.0, 8.0, 12.0]);
    }

    #[test]
    fn full_length_recording_decimates_to_55680() {
        let x = Waveform::new(vec![0.0; 6_960_000], 8000.0).unwrap();
        assert_eq!(decimate(&x, 125).unwrap().len(), 55_680);
    }
}
