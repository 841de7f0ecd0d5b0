//! Raw recording → 64 Hz, band-limited, normalized recording.

use std::path::Path;

use super::{bandpass_zero_phase, decimate, extract_envelope, Waveform};
use crate::dataio::Recording;
use crate::error::{Error, Result};

pub const TARGET_RATE_HZ: u32 = 64;
pub const EEG_BAND_HZ: (f64, f64) = (0.5, 32.0);

fn integer_factor(rate: f64, target: u32) -> Result<usize> {
    let factor = rate / f64::from(target);
    if factor.fract() != 0.0 || factor < 1.0 {
        return Err(Error::invalid(format!(
            "sample rate {rate} Hz is not an integer multiple of {target} Hz"
        )));
    }
    Ok(factor as usize)
}

/// Band-pass then keep every k-th sample to reach 64 Hz. At 64 Hz the upper
/// edge sits at Nyquist, so only the high-pass half applies there.
pub fn condition(x: &Waveform) -> Result<Waveform> {
    let factor = integer_factor(x.sample_rate_hz(), TARGET_RATE_HZ)?;
    let (lo, hi) = EEG_BAND_HZ;
    let filtered = if hi < x.sample_rate_hz() / 2.0 {
        bandpass_zero_phase(x, lo, hi)?
    } else {
        let hp = super::Biquad::butter_highpass(lo, x.sample_rate_hz());
        Waveform::new(super::filtfilt(&[hp], x.samples()), x.sample_rate_hz())?
    };
    decimate(&filtered, factor)
}

/// Conditions every EEG channel and the envelope, then z-scores. With
/// `stimulus`, the envelope is extracted from the audio instead of taken
/// from the recording; both streams are cut to the shorter length.
pub fn preprocess(rec: &Recording, stimulus: Option<&Waveform>) -> Result<Recording> {
    let fs = f64::from(rec.sample_rate_hz());
    let channels: Vec<Vec<f64>> = (0..rec.n_channels())
        .map(|c| Ok(condition(&Waveform::new(rec.channel_f64(c), fs)?)?.into_samples()))
        .collect::<Result<_>>()?;
    let envelope = match stimulus {
        Some(audio) => condition(&extract_envelope(audio)?)?.into_samples(),
        None => condition(&Waveform::new(rec.envelope_f64(), fs)?)?.into_samples(),
    };
    let n = channels
        .first()
        .map_or(0, Vec::len)
        .min(envelope.len());
    let channels: Vec<Vec<f64>> = channels.into_iter().map(|mut c| {
        c.truncate(n);
        c
    }).collect();
    let out = Recording::from_channels(
        rec.subject_id(),
        rec.recording_id(),
        TARGET_RATE_HZ,
        &channels,
        &envelope[..n],
    )?;
    Ok(out.normalized())
}

/// 16-bit PCM mono WAV as a waveform scaled to [-1, 1).
pub fn read_wav_mono(path: &Path) -> Result<Waveform> {
    let wav_err = |reason: String| Error::Wav {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(format!(
            "{} channels; downmix to mono first",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err("expected 16-bit integer PCM".into()));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(e.to_string()))?;
    Waveform::new(samples, f64::from(spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn raw_recording_to_64_hz() {
        let fs = 512.0;
        let n = 512 * 30;
        let tone = |f: f64| (0..n).map(move |i| (2.0 * PI * f * i as f64 / fs).sin());
        let ch0: Vec<f64> = tone(4.0).zip(tone(100.0)).map(|(a, b)| a + b + 3.0).collect();
        let env: Vec<f64> = tone(2.0).map(|v| v + 1.0).collect();
        let rec = Recording::from_channels("s", "r", 512, &[ch0], &env).unwrap();
        let out = preprocess(&rec, None).unwrap();
        assert_eq!(out.sample_rate_hz(), 64);
        assert_eq!(out.n_samples(), n / 8);
        let x = out.channel_f64(0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
        // after removing 100 Hz and DC, channel 0 tracks the 4 Hz tone
        let reference: Vec<f64> = (0..x.len()).map(|i| (2.0 * PI * 4.0 * i as f64 / 64.0).sin()).collect();
        let corr = x.iter().zip(&reference).map(|(a, b)| a * b).sum::<f64>()
            / (x.len() as f64 * (0.5f64).sqrt());
        assert!(corr > 0.99, "{corr}");
    }

    #[test]
    fn rates_must_divide() {
        let w = Waveform::new(vec![0.0; 1000], 100.0).unwrap();
        assert!(condition(&w).is_err());
        let w = Waveform::new(vec![1.0; 640], 64.0).unwrap();
        assert_eq!(condition(&w).unwrap().len(), 640);
    }

    #[test]
    fn wav_roundtrip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav_mono(&path).unwrap();
        assert_eq!(wave.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(wave.sample_rate_hz(), 8000.0);

        let stereo = dir.path().join("b.wav");
        let mut w = hound::WavWriter::create(&stereo, hound::WavSpec { channels: 2, ..spec }).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav_mono(&stereo).unwrap_err().to_string().contains("mono"));
    }
}
