//! Mono WAV I/O. Only 16-bit PCM and 32-bit IEEE float are accepted.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Int16,
    Float32,
}

fn decode<R: Read>(reader: hound::WavReader<R>, expected_rate: u32) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            "wav",
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::format(
            "wav",
            format!(
                "expected {expected_rate} Hz, found {} Hz (resampling is not supported)",
                spec.sample_rate
            ),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::format("wav", e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::format("wav", e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::format(
                "wav",
                format!("unsupported encoding {fmt:?} with {bits} bits per sample"),
            ))
        }
    };
    Waveform::new(samples, spec.sample_rate)
        .map_err(|e| Error::format("wav", e.to_string()))
}

/// Decodes an in-memory WAV file.
pub fn decode_wav(bytes: &[u8], expected_rate: u32) -> Result<Waveform> {
    let reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::format("wav", e.to_string()))?;
    decode(reader, expected_rate)
}

pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format("wav", format!("{}: {other}", path.display())),
    })?;
    decode(reader, expected_rate).map_err(|e| match e {
        Error::Format { kind, msg } => Error::format(kind, format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn encode<W: Write + Seek>(sink: W, w: &Waveform, format: SampleFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: match format {
            SampleFormat::Int16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Int16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let err = |e: hound::Error| Error::format("wav", e.to_string());
    let mut writer = hound::WavWriter::new(sink, spec).map_err(err)?;
    for &s in w.samples() {
        match format {
            SampleFormat::Int16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(err)?;
            }
            SampleFormat::Float32 => writer.write_sample(s as f32).map_err(err)?,
        }
    }
    writer.finalize().map_err(err)
}

pub fn encode_wav(w: &Waveform, format: SampleFormat) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    encode(&mut cursor, w, format)?;
    Ok(cursor.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
