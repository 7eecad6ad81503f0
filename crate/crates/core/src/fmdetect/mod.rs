//! Frequency-modulated call detection.
//!
//! A block is turned into a band-limited, optionally whitened spectrogram,
//! binarized at a percentile, split into 8-connected regions, filtered by
//! duration and bandwidth, described by a grid occupancy mask (`cra`) or a
//! histogram of oriented gradients (`hog`) and scored by a small network.

pub mod features;
pub mod regions;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::archive::AudioClip;
use crate::dsp::{self, DspError, Spectrogram, SpectrogramParams, DEFAULT_CONDITION_FRAMES};
use crate::event::{Bounds, DetectionEvent};
use crate::mlp::{MlpError, MlpModel};
use features::{grid_mask, hog_features, resample_patch, FeatureError};
use regions::{binarize, connected_regions, Region, RegionError};

#[derive(Debug, thiserror::Error)]
pub enum FmError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] MlpError),
    #[error("model expects features {expected:?}..., algorithm {algorithm} produces {got:?}...")]
    Schema { algorithm: String, expected: Option<String>, got: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FmAlgorithm {
    /// Grid occupancy of the binarized region.
    Cra,
    /// Oriented-gradient histogram of the region's resampled spectrogram patch.
    Hog,
}

impl FmAlgorithm {
    pub fn id(self) -> &'static str {
        match self {
            FmAlgorithm::Cra => "cra",
            FmAlgorithm::Hog => "hog",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "cra" => Some(FmAlgorithm::Cra),
            "hog" => Some(FmAlgorithm::Hog),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionFilter {
    pub min_area: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub min_bandwidth_hz: f64,
    pub max_bandwidth_hz: f64,
}

impl Default for RegionFilter {
    fn default() -> Self {
        Self {
            min_area: 10,
            min_duration_s: 0.3,
            max_duration_s: 2.5,
            min_bandwidth_hz: 30.0,
            max_bandwidth_hz: 250.0,
        }
    }
}

impl RegionFilter {
    pub fn accepts(&self, region: &Region, spec: &Spectrogram) -> bool {
        let b = region.bounds(spec);
        let (dur, bw) = (b.t1_s - b.t0_s, b.f_hi - b.f_lo);
        region.area() >= self.min_area
            && (self.min_duration_s..=self.max_duration_s).contains(&dur)
            && (self.min_bandwidth_hz..=self.max_bandwidth_hz).contains(&bw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FmConfig {
    pub spectrogram: SpectrogramParams,
    pub band_hz: (f64, f64),
    /// Apply running-median conditioning before binarization.
    pub whiten: bool,
    pub condition_frames: usize,
    pub percentile: f64,
    pub filter: RegionFilter,
    pub grid: (usize, usize),
    pub threshold: f64,
}

impl Default for FmConfig {
    fn default() -> Self {
        Self {
            spectrogram: SpectrogramParams::default(),
            band_hz: (50.0, 400.0),
            whiten: true,
            condition_frames: DEFAULT_CONDITION_FRAMES,
            percentile: 98.5,
            filter: RegionFilter::default(),
            grid: (16, 16),
            threshold: 0.5,
        }
    }
}

impl FmConfig {
    /// Longest event this detector can emit, used to size block overlap.
    pub fn max_event_s(&self) -> f64 {
        self.filter.max_duration_s
    }
}

pub fn feature_names(alg: FmAlgorithm, grid: (usize, usize)) -> Vec<String> {
    match alg {
        FmAlgorithm::Cra => (0..grid.0 * grid.1).map(|i| format!("grid_{i:03}")).collect(),
        FmAlgorithm::Hog => (0..features::HOG_LEN).map(|i| format!("hog_{i:03}")).collect(),
    }
}

/// The spectrogram detection runs on: band-cropped, conditioned when `whiten` is set.
pub fn detection_spectrogram(clip: &AudioClip, cfg: &FmConfig) -> Result<Spectrogram, FmError> {
    let spec = dsp::stft(clip, &cfg.spectrogram)?.band(cfg.band_hz.0, cfg.band_hz.1)?;
    Ok(if cfg.whiten { dsp::condition(&spec, cfg.condition_frames)? } else { spec })
}

/// Regions that survive binarization and the morphology filter.
pub fn candidate_regions(spec: &Spectrogram, cfg: &FmConfig) -> Result<Vec<Region>, FmError> {
    let mask = binarize(spec, cfg.percentile)?;
    Ok(connected_regions(&mask, cfg.filter.min_area)
        .into_iter()
        .filter(|r| cfg.filter.accepts(r, spec))
        .collect())
}

/// Model input vector for one region.
pub fn region_features(
    spec: &Spectrogram,
    region: &Region,
    alg: FmAlgorithm,
    grid: (usize, usize),
) -> Result<Vec<f64>, FmError> {
    Ok(match alg {
        FmAlgorithm::Cra => grid_mask(region, grid)?,
        FmAlgorithm::Hog => hog_features(&resample_patch(spec, region))?,
    })
}

fn morphology(spec: &Spectrogram, region: &Region) -> BTreeMap<String, f64> {
    let b = region.bounds(spec);
    let vals: Vec<f64> = region.pixels.iter().map(|&(t, k)| spec.at(t, k)).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Least-squares slope of pixel frequency against time.
    let n = vals.len() as f64;
    let ts: Vec<f64> = region.pixels.iter().map(|&(t, _)| spec.frame_center_s(t)).collect();
    let fs: Vec<f64> = region.pixels.iter().map(|&(_, k)| spec.bin_freq(k)).collect();
    let (mt, mf) = (ts.iter().sum::<f64>() / n, fs.iter().sum::<f64>() / n);
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&fs).map(|(t, f)| (t - mt) * (f - mf)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    BTreeMap::from([
        ("duration_s".to_string(), b.t1_s - b.t0_s),
        ("bandwidth_hz".to_string(), b.f_hi - b.f_lo),
        ("area_px".to_string(), region.area() as f64),
        ("mean_db".to_string(), mean),
        ("peak_db".to_string(), peak),
        ("slope_hz_per_s".to_string(), slope),
    ])
}

fn check_schema(model: &MlpModel, names: &[String], alg: FmAlgorithm) -> Result<(), FmError> {
    if !model.feature_names.is_empty() && model.feature_names != names {
        return Err(FmError::Schema {
            algorithm: alg.id().into(),
            expected: model.feature_names.first().cloned(),
            got: names.first().cloned(),
        });
    }
    if model.inputs() != names.len() {
        return Err(MlpError::LengthMismatch { expected: model.inputs(), got: names.len() }.into());
    }
    Ok(())
}

/// Run the full detector over one clip. Events scoring at least
/// `cfg.threshold` are returned in time order with their feature vectors.
pub fn detect_fm(
    clip: &AudioClip,
    cfg: &FmConfig,
    alg: FmAlgorithm,
    model: &MlpModel,
    archive_id: &str,
) -> Result<Vec<DetectionEvent>, FmError> {
    let names = feature_names(alg, cfg.grid);
    check_schema(model, &names, alg)?;
    if clip.samples.len() < cfg.spectrogram.fft_size {
        return Ok(Vec::new());
    }
    let spec = detection_spectrogram(clip, cfg)?;
    let mut out = Vec::new();
    for region in candidate_regions(&spec, cfg)? {
        let x = region_features(&spec, &region, alg, cfg.grid)?;
        let score = model.predict(&x)?;
        if score < cfg.threshold {
            continue;
        }
        let b = region.bounds(&spec);
        let mut feats = morphology(&spec, &region);
        feats.extend(names.iter().cloned().zip(x));
        let bounds = Bounds {
            t0: spec.start_time.add_seconds(b.t0_s),
            t1: spec.start_time.add_seconds(b.t1_s),
            f_lo: b.f_lo,
            f_hi: b.f_hi,
        };
        out.push(DetectionEvent::new(archive_id, clip.channel, alg.id(), bounds, score, feats));
    }
    crate::event::sort_events(&mut out);
    Ok(out)
}
