//! Spectrogram dumps: grayscale PNG and raw little-endian float32 with a JSON
//! header. Image row 0 holds the lowest stored frequency bin; columns are frames.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Spectrogram;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub frames: usize,
    pub bins: usize,
    pub frame_period_s: f64,
    pub bin_hz: f64,
    pub first_bin_hz: f64,
    pub start_time: Timestamp,
    pub db_floor: f64,
    /// Always `"f32le"`, row-major `[frames x bins]`.
    pub dtype: String,
}

/// Encode as an 8-bit grayscale PNG, mapping `[lo_db, hi_db]` to `[0, 255]`.
pub fn to_png(spec: &Spectrogram, lo_db: f64, hi_db: f64) -> Vec<u8> {
    let (w, h) = (spec.n_frames.max(1), spec.n_bins.max(1));
    let span = (hi_db - lo_db).max(f64::EPSILON);
    let mut pixels = vec![0u8; w * h];
    for t in 0..spec.n_frames {
        for k in 0..spec.n_bins {
            let v = ((spec.at(t, k) - lo_db) / span).clamp(0.0, 1.0);
            pixels[k * w + t] = (v * 255.0).round() as u8;
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header to memory");
        writer.write_image_data(&pixels).expect("png data to memory");
    }
    out
}

/// Writes `<base>.f32` and `<base>.json`.
pub fn write_matrix(spec: &Spectrogram, base: &Path) -> io::Result<()> {
    let header = MatrixHeader {
        frames: spec.n_frames,
        bins: spec.n_bins,
        frame_period_s: spec.frame_period_s,
        bin_hz: spec.bin_hz,
        first_bin_hz: spec.bin_freq(0),
        start_time: spec.start_time,
        db_floor: spec.params.db_floor,
        dtype: "f32le".into(),
    };
    let bytes: Vec<u8> = spec.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(base.with_extension("f32"), bytes)?;
    fs::write(base.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

pub fn read_matrix(base: &Path) -> io::Result<(MatrixHeader, Vec<f32>)> {
    let header: MatrixHeader = serde_json::from_slice(&fs::read(base.with_extension("json"))?)?;
    let bytes = fs::read(base.with_extension("f32"))?;
    if bytes.len() != header.frames * header.bins * 4 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "matrix size does not match header"));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}
