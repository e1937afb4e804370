use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("WAV: {other}")),
    }
}

/// Reads a 16-bit PCM mono WAV. Anything else is rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::Format(format!(
            "unsupported WAV encoding: {} channel(s), {}-bit {:?}; expected 16-bit PCM mono",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes 16-bit PCM mono, clipping to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: w.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::sine(440.0, 0.5, 2400, 24_000);
        write_wav(&p, &w).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), 2400);
        assert_eq!(back.sample_rate, 24_000);
        assert!(back.samples.iter().zip(&w.samples).all(|(a, b)| (a - b).abs() < 1e-4));

        let stereo = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 24_000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut wr = WavWriter::create(&stereo, spec).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        let err = read_wav(&stereo).unwrap_err();
        assert!(err.to_string().contains("unsupported WAV encoding"), "{err}");
    }
}
