use std::io::BufWriter;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{AudioError, Error, Result};

/// One 16-bit quantization step, 2⁻¹⁵.
pub const QUANT_STEP: f64 = 1.0 / 32768.0;

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => AudioError::MalformedHeader(msg.to_string()).into(),
        other => AudioError::MalformedHeader(other.to_string()).into(),
    }
}

/// Reads mono 16-bit PCM at 16 kHz; samples are scaled by 2⁻¹⁵.
pub fn read_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::NotMono {
            channels: spec.channels,
        }
        .into());
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::BitDepth {
            bits: spec.bits_per_sample,
            format: match spec.sample_format {
                SampleFormat::Int => "integer",
                SampleFormat::Float => "float",
            },
        }
        .into());
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::SampleRate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        }
        .into());
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 * QUANT_STEP))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    if samples.is_empty() {
        return Err(AudioError::MalformedHeader("file contains no samples".into()).into());
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Writes mono 16-bit PCM, clamping to `[-1, 1 - 2⁻¹⁵]` before rounding.
pub fn write_audio(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    if wave.sample_rate() != SAMPLE_RATE {
        return Err(AudioError::SampleRate {
            found: wave.sample_rate(),
            expected: SAMPLE_RATE,
        }
        .into());
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(e) => e,
        other => std::io::Error::other(other.to_string()),
    };
    super::write_atomic(path.as_ref(), |file| {
        let mut writer = WavWriter::new(BufWriter::new(file), spec).map_err(to_io)?;
        for &x in wave.samples() {
            let q = (x.clamp(-1.0, 1.0 - QUANT_STEP) * 32768.0).round() as i16;
            writer.write_sample(q).map_err(to_io)?;
        }
        writer.finalize().map_err(to_io)
    })
}
