//! Spectrogram front end shared by both detector families.
//!
//! [`stft`] produces one-sided power in dB with an explicit floor;
//! [`condition`] whitens it by subtracting a per-bin running median over time.

pub mod dump;
pub mod median;

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::archive::AudioClip;
use crate::time::Timestamp;

/// Running-median window used by [`condition`] unless configured otherwise.
pub const DEFAULT_CONDITION_FRAMES: usize = 121;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("fft_size {0} is not a power of two")]
    FftSize(usize),
    #[error("hop {hop} must be in 1..={fft_size}")]
    Hop { hop: usize, fft_size: usize },
    #[error("clip has {len} samples, fewer than fft_size {fft_size}")]
    ClipTooShort { len: usize, fft_size: usize },
    #[error("spectrogram is empty")]
    Empty,
    #[error("band {f_lo}-{f_hi} Hz lies outside the spectrogram range {min}-{max} Hz")]
    Band { f_lo: f64, f_hi: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramParams {
    pub fft_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
    pub db_floor: f64,
}

impl Default for SpectrogramParams {
    fn default() -> Self {
        Self { fft_size: 512, hop: 128, window: Window::Hann, db_floor: -120.0 }
    }
}

impl SpectrogramParams {
    pub fn validate(&self) -> Result<(), DspError> {
        if !self.fft_size.is_power_of_two() {
            return Err(DspError::FftSize(self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(DspError::Hop { hop: self.hop, fft_size: self.fft_size });
        }
        Ok(())
    }

    /// Power added inside the log so that silence maps exactly to `db_floor`.
    pub fn epsilon(&self) -> f64 {
        10f64.powf(self.db_floor / 10.0)
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.fft_size {
            0
        } else {
            (samples - self.fft_size) / self.hop + 1
        }
    }
}

/// Row-major `[frames x bins]` grid of dB values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub params: SpectrogramParams,
    pub sample_rate_hz: u32,
    pub start_time: Timestamp,
    pub frame_period_s: f64,
    pub bin_hz: f64,
    /// Index of the first stored bin in the full `fft_size / 2 + 1` spectrum.
    pub bin_offset: usize,
    pub n_frames: usize,
    pub n_bins: usize,
    pub values: Vec<f64>,
}

impl Spectrogram {
    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.n_bins + bin]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0 || self.n_bins == 0
    }

    /// Offset of the frame's window center from `start_time`, in seconds.
    pub fn frame_center_s(&self, frame: usize) -> f64 {
        (frame * self.params.hop) as f64 / self.sample_rate_hz as f64
            + self.params.fft_size as f64 / (2.0 * self.sample_rate_hz as f64)
    }

    pub fn bin_freq(&self, bin: usize) -> f64 {
        (self.bin_offset + bin) as f64 * self.bin_hz
    }

    /// Copy of the bins whose center frequencies lie within `[f_lo, f_hi]`.
    pub fn band(&self, f_lo: f64, f_hi: f64) -> Result<Spectrogram, DspError> {
        let lo = (0..self.n_bins).find(|&k| self.bin_freq(k) >= f_lo);
        let hi = (0..self.n_bins).rev().find(|&k| self.bin_freq(k) <= f_hi);
        let (lo, hi) = match (lo, hi) {
            (Some(lo), Some(hi)) if lo <= hi && f_lo < f_hi => (lo, hi),
            _ => {
                return Err(DspError::Band {
                    f_lo,
                    f_hi,
                    min: self.bin_freq(0),
                    max: self.bin_freq(self.n_bins.saturating_sub(1)),
                })
            }
        };
        let width = hi - lo + 1;
        let mut values = Vec::with_capacity(self.n_frames * width);
        for t in 0..self.n_frames {
            values.extend_from_slice(&self.row(t)[lo..=hi]);
        }
        Ok(Spectrogram {
            bin_offset: self.bin_offset + lo,
            n_bins: width,
            values,
            ..self.clone()
        })
    }
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic form; the frame hop tiles it without a duplicated endpoint.
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Short-time power spectrum in dB.
///
/// Power is one-sided and scaled so that the bins of each frame sum to the
/// energy of the windowed frame.
pub fn stft(clip: &AudioClip, params: &SpectrogramParams) -> Result<Spectrogram, DspError> {
    params.validate()?;
    let n = params.fft_size;
    if clip.samples.len() < n {
        return Err(DspError::ClipTooShort { len: clip.samples.len(), fft_size: n });
    }
    let frames = params.frame_count(clip.samples.len());
    let bins = n / 2 + 1;
    let window = match params.window {
        Window::Hann => hann(n),
    };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let eps = params.epsilon();
    let scale = 1.0 / n as f64;

    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let frame = &clip.samples[t * params.hop..t * params.hop + n];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf[..bins].iter().enumerate() {
            let edge = k == 0 || k == n / 2;
            let p = c.norm_sqr() * scale * if edge { 1.0 } else { 2.0 };
            values.push(10.0 * (p + eps).log10());
        }
    }
    Ok(Spectrogram {
        params: *params,
        sample_rate_hz: clip.sample_rate_hz,
        start_time: clip.start_time,
        frame_period_s: params.hop as f64 / clip.sample_rate_hz as f64,
        bin_hz: clip.sample_rate_hz as f64 / n as f64,
        bin_offset: 0,
        n_frames: frames,
        n_bins: bins,
        values,
    })
}

/// Subtract, per frequency bin, the running median over `window_frames`
/// centered frames. Output may be negative.
pub fn condition(spec: &Spectrogram, window_frames: usize) -> Result<Spectrogram, DspError> {
    if spec.is_empty() {
        return Err(DspError::Empty);
    }
    let (nt, nb) = (spec.n_frames, spec.n_bins);
    let mut out = vec![0.0; nt * nb];
    let mut column = vec![0.0; nt];
    for k in 0..nb {
        for (t, c) in column.iter_mut().enumerate() {
            *c = spec.values[t * nb + k];
        }
        let med = median::running_median(&column, window_frames);
        for t in 0..nt {
            out[t * nb + k] = column[t] - med[t];
        }
    }
    Ok(Spectrogram { values: out, ..spec.clone() })
}
