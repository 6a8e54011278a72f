//! Mono WAV input and output at the pipeline sample rate.
//!
//! Readers accept 16-bit PCM and 32-bit float files; writers produce
//! either on request. Samples cross the boundary as `f64` in [-1, 1],
//! with PCM conversion scaled by 32768 and written values clamped.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

fn wav_err(path: &Path, message: impl ToString) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Read a mono 16 kHz WAV file as float samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("expected mono, got {} channels", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!("expected {} Hz, got {}", SAMPLE_RATE, spec.sample_rate),
        ));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM_SCALE).map_err(|e| wav_err(path, e)))
            .collect(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64).map_err(|e| wav_err(path, e)))
            .collect(),
        (format, bits) => Err(wav_err(
            path,
            format!("unsupported sample format {format:?}/{bits}-bit"),
        )),
    }
}

/// Write samples as 16-bit PCM, clamping to [-1, 1).
pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let v = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Write samples as 32-bit float, clamping to [-1, 1].
pub fn write_wav_f32(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        writer
            .write_sample(s.clamp(-1.0, 1.0) as f32)
            .map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip_is_within_half_a_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.wav");
        let samples: Vec<f64> = (0..500)
            .map(|n| 0.9 * (2.0 * std::f64::consts::PI * n as f64 / 50.0).sin())
            .collect();
        write_wav_pcm16(&path, &samples).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / PCM_SCALE + 1e-12);
        }
    }

    #[test]
    fn float_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.wav");
        let samples: Vec<f64> = (0..500).map(|n| (n as f64 / 250.0) - 1.0).collect();
        write_wav_f32(&path, &samples).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert!((*a as f32 as f64 - b).abs() == 0.0);
        }
    }

    #[test]
    fn pcm_writer_clamps_overrange_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hot.wav");
        write_wav_pcm16(&path, &[2.0, -2.0]).unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back[0] - 32767.0 / PCM_SCALE).abs() < 1e-12);
        assert!((back[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reader_rejects_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slow.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut writer = WavWriter::create(&path, spec).unwrap();
        writer.write_sample(0i16).unwrap();
        writer.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
    }
}
