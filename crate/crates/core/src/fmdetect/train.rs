//! Training the call classifier from synthetic examples.
//!
//! Candidate regions are harvested from seeded noise recordings carrying
//! injected upsweeps (positives) and confusable signals such as downsweeps,
//! tones and fast sweeps (negatives). A region is a positive example when it
//! overlaps an injected upsweep in time and frequency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{candidate_regions, detection_spectrogram, feature_names, region_features, FmAlgorithm, FmConfig, FmError};
use crate::mlp::{self, MlpModel, Standardizer, TrainParams};
use crate::synth::{self, add_at, band_power, linear_chirp, pink_noise, snr_gain};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FmTrainingConfig {
    pub sample_rate_hz: u32,
    /// Length of each synthetic recording.
    pub recording_s: f64,
    pub recordings: usize,
    /// Spacing between injected signals.
    pub spacing_s: f64,
    pub snr_db: (f64, f64),
    pub noise_rms: f64,
    pub params: TrainParams,
}

impl Default for FmTrainingConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2000,
            recording_s: 300.0,
            recordings: 4,
            spacing_s: 6.0,
            snr_db: (8.0, 22.0),
            noise_rms: 0.05,
            params: TrainParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

struct Placed {
    t0: f64,
    t1: f64,
    positive: bool,
}

fn recording(tc: &FmTrainingConfig, seed: u64) -> (Vec<f64>, Vec<Placed>) {
    let fs = tc.sample_rate_hz;
    let n = (tc.recording_s * fs as f64) as usize;
    let mut x = pink_noise(n, tc.noise_rms, seed);
    let mut r = synth::rng(seed ^ 0xf00d);
    let mut placed = Vec::new();
    let mut t = 2.0 + r.gen::<f64>();
    let mut i = 0usize;
    while t + 3.0 < tc.recording_s {
        let dur = r.gen_range(0.6..1.4);
        let kind = i % 4;
        let (f0, f1) = match kind {
            0 | 1 => (r.gen_range(80.0..120.0), r.gen_range(170.0..230.0)),
            2 => (r.gen_range(170.0..230.0), r.gen_range(80.0..120.0)),
            _ => {
                let f = r.gen_range(80.0..300.0);
                (f, f + r.gen_range(-8.0..8.0))
            }
        };
        let sig = linear_chirp(fs, f0, f1, dur);
        let bp = band_power(&x, fs, f0.min(f1) - 10.0, f0.max(f1) + 10.0);
        let g = snr_gain(&sig, bp, r.gen_range(tc.snr_db.0..tc.snr_db.1));
        add_at(&mut x, (t * fs as f64) as usize, &sig, g);
        placed.push(Placed { t0: t, t1: t + dur, positive: kind < 2 });
        t += tc.spacing_s + r.gen::<f64>() * 2.0;
        i += 1;
    }
    (x, placed)
}

/// Harvest labeled feature rows for `alg`.
pub fn training_set(cfg: &FmConfig, alg: FmAlgorithm, tc: &FmTrainingConfig, seed: u64) -> Result<TrainingSet, FmError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for k in 0..tc.recordings {
        let (x, placed) = recording(tc, seed.wrapping_mul(1000).wrapping_add(k as u64));
        let sig = synth::SynthSignal { sample_rate_hz: tc.sample_rate_hz, samples: x, injections: Vec::new() };
        let clip = sig.clip(Timestamp::default());
        let spec = detection_spectrogram(&clip, cfg)?;
        for region in candidate_regions(&spec, cfg)? {
            let b = region.bounds(&spec);
            let positive = placed.iter().any(|p| p.positive && b.t0_s < p.t1 && p.t0 < b.t1_s);
            rows.push(region_features(&spec, &region, alg, cfg.grid)?);
            labels.push(if positive { 1.0 } else { 0.0 });
        }
    }
    Ok(TrainingSet { rows, labels })
}

/// Train a standardized classifier on the synthetic set, with class weights
/// balancing positives against negatives.
pub fn train_model(cfg: &FmConfig, alg: FmAlgorithm, tc: &FmTrainingConfig, seed: u64) -> Result<MlpModel, FmError> {
    let set = training_set(cfg, alg, tc, seed)?;
    let pos = set.labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let neg = set.labels.len() as f64 - pos;
    let weights: Vec<f64> = set
        .labels
        .iter()
        .map(|&y| if y > 0.5 { 0.5 / pos.max(1.0) } else { 0.5 / neg.max(1.0) } * set.labels.len() as f64)
        .collect();
    let std = Standardizer::fit(&set.rows);
    let xs: Vec<Vec<f64>> = set.rows.iter().map(|r| std.apply(r)).collect();
    let mut model = mlp::train(&xs, &set.labels, Some(&weights), &tc.params, seed)?;
    model.standardizer = Some(std);
    model.feature_names = feature_names(alg, cfg.grid);
    log::info!(
        "trained {} model on {} regions ({} positive), final loss {:.4}",
        alg.id(),
        set.labels.len(),
        pos,
        model.training.final_loss.unwrap_or(f64::NAN)
    );
    Ok(model)
}
