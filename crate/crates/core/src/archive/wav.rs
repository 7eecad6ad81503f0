//! WAV header probing, frame reads and writes.
//!
//! Integer PCM (16/24-bit) is normalized by `2^(bits-1)`; 32-bit IEEE float is
//! passed through unchanged.

use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    Int16,
    Int24,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Int16 => 16,
            SampleFormat::Int24 => 24,
            SampleFormat::Float32 => 32,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WavHeader {
    pub channels: u16,
    pub sample_rate_hz: u32,
    pub frame_count: u64,
    pub format: SampleFormat,
}

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("unreadable header: {0}")]
    Header(hound::Error),
    #[error("unsupported sample format: {bits}-bit {kind}")]
    Unsupported { bits: u16, kind: &'static str },
    #[error(transparent)]
    Io(#[from] hound::Error),
}

fn format_of(spec: &WavSpec) -> Result<SampleFormat, WavError> {
    match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => Ok(SampleFormat::Int16),
        (HoundFormat::Int, 24) => Ok(SampleFormat::Int24),
        (HoundFormat::Float, 32) => Ok(SampleFormat::Float32),
        (HoundFormat::Int, bits) => Err(WavError::Unsupported { bits, kind: "int" }),
        (HoundFormat::Float, bits) => Err(WavError::Unsupported { bits, kind: "float" }),
    }
}

pub fn probe(path: &Path) -> Result<WavHeader, WavError> {
    let reader = WavReader::open(path).map_err(WavError::Header)?;
    let spec = reader.spec();
    let format = format_of(&spec)?;
    if spec.channels == 0 || spec.sample_rate == 0 {
        return Err(WavError::Header(hound::Error::FormatError("zero channels or rate")));
    }
    Ok(WavHeader {
        channels: spec.channels,
        sample_rate_hz: spec.sample_rate,
        frame_count: u64::from(reader.duration()),
        format,
    })
}

/// Read `count` frames of one channel starting at frame `offset`.
pub fn read_channel(path: &Path, channel: u16, offset: u64, count: usize) -> Result<Vec<f32>, WavError> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let format = format_of(&spec)?;
    let nch = spec.channels as usize;
    let ch = channel as usize;
    reader.seek(offset as u32).map_err(hound::Error::IoError)?;
    let mut out = Vec::with_capacity(count);
    let total = count * nch;
    match format {
        SampleFormat::Float32 => {
            for (i, s) in reader.samples::<f32>().take(total).enumerate() {
                let s = s?;
                if i % nch == ch {
                    out.push(s);
                }
            }
        }
        SampleFormat::Int16 | SampleFormat::Int24 => {
            let scale = 1.0 / (1u32 << (spec.bits_per_sample - 1)) as f32;
            for (i, s) in reader.samples::<i32>().take(total).enumerate() {
                let s = s?;
                if i % nch == ch {
                    out.push(s as f32 * scale);
                }
            }
        }
    }
    if out.len() != count {
        return Err(WavError::Io(hound::Error::FormatError("file shorter than header")));
    }
    Ok(out)
}

/// Write per-channel sample slices (all the same length) as one interleaved WAV.
pub fn write_wav(
    path: &Path,
    sample_rate_hz: u32,
    format: SampleFormat,
    channels: &[&[f32]],
) -> Result<(), WavError> {
    assert!(!channels.is_empty(), "at least one channel");
    let frames = channels[0].len();
    assert!(channels.iter().all(|c| c.len() == frames), "ragged channels");
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: sample_rate_hz,
        bits_per_sample: format.bits(),
        sample_format: match format {
            SampleFormat::Float32 => HoundFormat::Float,
            _ => HoundFormat::Int,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    match format {
        SampleFormat::Float32 => {
            for i in 0..frames {
                for c in channels {
                    writer.write_sample(c[i])?;
                }
            }
        }
        SampleFormat::Int16 | SampleFormat::Int24 => {
            let full = (1i64 << (format.bits() - 1)) as f64;
            let (lo, hi) = (-full, full - 1.0);
            for i in 0..frames {
                for c in channels {
                    let v = (c[i] as f64 * full).round().clamp(lo, hi) as i32;
                    writer.write_sample(v)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
