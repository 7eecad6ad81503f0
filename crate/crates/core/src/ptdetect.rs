//! Pulse-train detection in three phases.
//!
//! *Aggregation* projects band energy onto the time axis and cuts it into
//! pulses against a robust noise floor. *Segmentation* groups pulses whose
//! onsets follow each other closely enough. *Registration* accepts a group
//! when its inter-pulse intervals are regular, measured by their coefficient
//! of variation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::archive::AudioClip;
use crate::dsp::{self, median::median, DspError, Spectrogram, SpectrogramParams};
use crate::event::{Bounds, DetectionEvent};
use crate::time::Timestamp;

pub const ALGORITHM_ID: &str = "asr_pt";

/// Scale factor turning a median absolute deviation into a Gaussian sigma.
const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PtError {
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtConfig {
    pub spectrogram: SpectrogramParams,
    pub band_hz: (f64, f64),
    pub whiten: bool,
    pub condition_frames: usize,
    pub k_sigma: f64,
    pub min_width_s: f64,
    pub max_width_s: f64,
    pub gap_max_s: f64,
    pub min_pulses: usize,
    pub cv_max: f64,
    pub ipi_min_s: f64,
    pub ipi_max_s: f64,
    /// Longest train reported as one event; longer groups are rejected.
    pub max_duration_s: f64,
}

impl Default for PtConfig {
    fn default() -> Self {
        Self {
            spectrogram: SpectrogramParams { fft_size: 256, hop: 64, ..SpectrogramParams::default() },
            band_hz: (50.0, 300.0),
            whiten: true,
            condition_frames: 601,
            k_sigma: 4.0,
            min_width_s: 0.02,
            max_width_s: 1.0,
            gap_max_s: 3.0,
            min_pulses: 5,
            cv_max: 0.35,
            ipi_min_s: 0.1,
            ipi_max_s: 2.0,
            max_duration_s: 10.0,
        }
    }
}

impl PtConfig {
    pub fn max_event_s(&self) -> f64 {
        self.max_duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub onset: Timestamp,
    pub width_s: f64,
    /// Peak of the band projection above the noise floor, dB.
    pub peak_db: f64,
    pub band: (f64, f64),
    /// The run touches the first or last frame of the block.
    pub edge_truncated: bool,
}

impl Pulse {
    pub fn end(&self) -> Timestamp {
        self.onset.add_seconds(self.width_s)
    }
}

/// Noise floor and scale of a projection: median and 1.4826 x MAD.
pub fn robust_floor(projection: &[f64]) -> (f64, f64) {
    let floor = median(projection);
    let dev: Vec<f64> = projection.iter().map(|v| (v - floor).abs()).collect();
    (floor, MAD_TO_SIGMA * median(&dev))
}

/// Mean dB over the spectrogram's bins, one value per frame.
pub fn project(spec: &Spectrogram) -> Vec<f64> {
    (0..spec.n_frames).map(|t| spec.row(t).iter().sum::<f64>() / spec.n_bins as f64).collect()
}

/// Pulses from runs of the band projection above `floor + k_sigma * scale`.
///
/// A pulse spans its run of frames, each frame covering one hop centered on
/// its window center. Runs touching either block edge are kept regardless of
/// width and flagged as truncated.
pub fn aggregate(
    spec: &Spectrogram,
    band_hz: (f64, f64),
    k_sigma: f64,
    width_bounds_s: (f64, f64),
) -> Result<Vec<Pulse>, PtError> {
    let band = spec.band(band_hz.0, band_hz.1)?;
    if band.is_empty() {
        return Err(DspError::Empty.into());
    }
    let proj = project(&band);
    let (floor, scale) = robust_floor(&proj);
    let thr = floor + k_sigma * scale;
    let hop_s = band.frame_period_s;
    let mut pulses = Vec::new();
    let mut t = 0;
    while t < proj.len() {
        if proj[t] <= thr {
            t += 1;
            continue;
        }
        let first = t;
        while t < proj.len() && proj[t] > thr {
            t += 1;
        }
        let last = t - 1;
        let edge = first == 0 || last + 1 == proj.len();
        let width_s = (last - first + 1) as f64 * hop_s;
        if !edge && !(width_bounds_s.0..=width_bounds_s.1).contains(&width_s) {
            continue;
        }
        let peak = proj[first..=last].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        pulses.push(Pulse {
            onset: band.start_time.add_seconds(band.frame_center_s(first) - hop_s / 2.0),
            width_s,
            peak_db: peak - floor,
            band: pulse_band(&band, first, last),
            edge_truncated: edge,
        });
    }
    Ok(pulses)
}

/// Frequency extent of bins within 10 dB of the strongest bin, averaged over the run.
fn pulse_band(spec: &Spectrogram, first: usize, last: usize) -> (f64, f64) {
    let n = (last - first + 1) as f64;
    let mean: Vec<f64> = (0..spec.n_bins)
        .map(|k| (first..=last).map(|t| spec.at(t, k)).sum::<f64>() / n)
        .collect();
    let peak = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mean.iter().position(|&v| v >= peak - 10.0).unwrap_or(0);
    let hi = mean.iter().rposition(|&v| v >= peak - 10.0).unwrap_or(spec.n_bins - 1);
    (spec.bin_freq(lo) - spec.bin_hz / 2.0, spec.bin_freq(hi) + spec.bin_hz / 2.0)
}

/// Greedy left-to-right grouping of onset-sorted pulses. An onset gap larger
/// than `gap_max_s` closes the current group; groups under `min_pulses` are dropped.
pub fn segment(pulses: &[Pulse], gap_max_s: f64, min_pulses: usize) -> Vec<Vec<Pulse>> {
    let mut groups: Vec<Vec<Pulse>> = Vec::new();
    let mut current: Vec<Pulse> = Vec::new();
    for p in pulses {
        if let Some(prev) = current.last() {
            if p.onset.seconds_since(prev.onset) > gap_max_s {
                groups.push(std::mem::take(&mut current));
            }
        }
        current.push(p.clone());
    }
    groups.push(current);
    groups.retain(|g| !g.is_empty() && g.len() >= min_pulses);
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterParams {
    pub cv_max: f64,
    pub ipi_min_s: f64,
    pub ipi_max_s: f64,
    pub max_duration_s: f64,
}

impl From<&PtConfig> for RegisterParams {
    fn from(c: &PtConfig) -> Self {
        Self { cv_max: c.cv_max, ipi_min_s: c.ipi_min_s, ipi_max_s: c.ipi_max_s, max_duration_s: c.max_duration_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    TooFewIpis { pulses: usize },
    Irregular { ipi_cv: f64 },
    IpiOutOfRange { ipi_mean_s: f64 },
    TooLong { duration_s: f64 },
}

impl Rejection {
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::TooFewIpis { .. } => "too_few_ipis",
            Rejection::Irregular { .. } => "irregular",
            Rejection::IpiOutOfRange { .. } => "ipi_out_of_range",
            Rejection::TooLong { .. } => "too_long",
        }
    }
}

/// A registered train before it is tied to an archive and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub pulses: Vec<Pulse>,
    pub ipi_s: Vec<f64>,
    pub ipi_mean_s: f64,
    pub ipi_cv: f64,
    pub registration_score: f64,
}

/// Mean and population coefficient of variation.
pub fn mean_cv(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, if mean > 0.0 { var.sqrt() / mean } else { f64::INFINITY })
}

pub fn register(train: &[Pulse], p: &RegisterParams) -> Result<PulseTrain, Rejection> {
    if train.len() < 3 {
        return Err(Rejection::TooFewIpis { pulses: train.len() });
    }
    let ipi: Vec<f64> = train.windows(2).map(|w| w[1].onset.seconds_since(w[0].onset)).collect();
    let (mean, cv) = mean_cv(&ipi);
    let last = train.last().expect("non-empty");
    let duration = last.end().seconds_since(train[0].onset);
    if duration > p.max_duration_s {
        return Err(Rejection::TooLong { duration_s: duration });
    }
    if !(p.ipi_min_s..=p.ipi_max_s).contains(&mean) {
        return Err(Rejection::IpiOutOfRange { ipi_mean_s: mean });
    }
    if cv.is_nan() || cv > p.cv_max {
        return Err(Rejection::Irregular { ipi_cv: cv });
    }
    Ok(PulseTrain {
        pulses: train.to_vec(),
        ipi_s: ipi,
        ipi_mean_s: mean,
        ipi_cv: cv,
        registration_score: (1.0 - cv / p.cv_max).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainEvent {
    pub event: DetectionEvent,
    pub pulses: Vec<Pulse>,
    pub ipi_s: Vec<f64>,
    pub ipi_mean_s: f64,
    pub ipi_cv: f64,
    pub registration_score: f64,
}

pub const FEATURE_NAMES: [&str; 8] = [
    "pulse_count",
    "duration_s",
    "ipi_mean_s",
    "ipi_cv",
    "mean_width_s",
    "mean_peak_db",
    "band_center_hz",
    "bandwidth_hz",
];

impl PulseTrain {
    pub fn t0(&self) -> Timestamp {
        self.pulses[0].onset
    }

    pub fn t1(&self) -> Timestamp {
        self.pulses.last().expect("registered trains have pulses").end()
    }

    pub fn features(&self) -> BTreeMap<String, f64> {
        let n = self.pulses.len() as f64;
        let mean = |f: &dyn Fn(&Pulse) -> f64| self.pulses.iter().map(f).sum::<f64>() / n;
        let vals = [
            n,
            self.t1().seconds_since(self.t0()),
            self.ipi_mean_s,
            self.ipi_cv,
            mean(&|p| p.width_s),
            mean(&|p| p.peak_db),
            mean(&|p| (p.band.0 + p.band.1) / 2.0),
            mean(&|p| p.band.1 - p.band.0),
        ];
        FEATURE_NAMES.iter().map(|s| s.to_string()).zip(vals).collect()
    }

    pub fn into_event(self, archive_id: &str, channel: u16) -> PulseTrainEvent {
        let f_lo = self.pulses.iter().map(|p| p.band.0).fold(f64::INFINITY, f64::min);
        let f_hi = self.pulses.iter().map(|p| p.band.1).fold(f64::NEG_INFINITY, f64::max);
        let bounds = Bounds { t0: self.t0(), t1: self.t1(), f_lo, f_hi: f_hi.max(f_lo + 1.0) };
        let event = DetectionEvent::new(archive_id, channel, ALGORITHM_ID, bounds, self.registration_score, self.features());
        PulseTrainEvent {
            event,
            pulses: self.pulses,
            ipi_s: self.ipi_s,
            ipi_mean_s: self.ipi_mean_s,
            ipi_cv: self.ipi_cv,
            registration_score: self.registration_score,
        }
    }
}

/// Everything one detection pass produced, including what registration refused.
#[derive(Debug, Clone, Default)]
pub struct PtReport {
    pub pulses: Vec<Pulse>,
    pub candidates: usize,
    pub rejections: Vec<(Timestamp, Rejection)>,
    pub events: Vec<PulseTrainEvent>,
}

pub fn detect_pt_report(clip: &AudioClip, cfg: &PtConfig, archive_id: &str) -> Result<PtReport, PtError> {
    if clip.samples.len() < cfg.spectrogram.fft_size {
        return Ok(PtReport::default());
    }
    let spec = dsp::stft(clip, &cfg.spectrogram)?.band(cfg.band_hz.0, cfg.band_hz.1)?;
    let spec = if cfg.whiten { dsp::condition(&spec, cfg.condition_frames)? } else { spec };
    let pulses = aggregate(&spec, cfg.band_hz, cfg.k_sigma, (cfg.min_width_s, cfg.max_width_s))?;
    let groups = segment(&pulses, cfg.gap_max_s, cfg.min_pulses);
    let params = RegisterParams::from(cfg);
    let mut report = PtReport { candidates: groups.len(), ..Default::default() };
    for g in &groups {
        match register(g, &params) {
            Ok(train) => report.events.push(train.into_event(archive_id, clip.channel)),
            Err(r) => report.rejections.push((g[0].onset, r)),
        }
    }
    report.pulses = pulses;
    Ok(report)
}

pub fn detect_pt(clip: &AudioClip, cfg: &PtConfig, archive_id: &str) -> Result<Vec<PulseTrainEvent>, PtError> {
    Ok(detect_pt_report(clip, cfg, archive_id)?.events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pulse_at(s: f64) -> Pulse {
        Pulse {
            onset: Timestamp::from_ymd_hms(2013, 1, 1, 0, 0, 0).add_seconds(s),
            width_s: 0.1,
            peak_db: 10.0,
            band: (100.0, 250.0),
            edge_truncated: false,
        }
    }

    fn at(times: &[f64]) -> Vec<Pulse> {
        times.iter().map(|&t| pulse_at(t)).collect()
    }

    #[test]
    fn segment_examples() {
        let even: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let g = segment(&at(&even), 2.0, 5);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].len(), 10);

        let two: Vec<f64> = (0..5).map(|i| i as f64).chain((20..25).map(|i| i as f64)).collect();
        let g = segment(&at(&two), 2.0, 5);
        assert_eq!(g.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);

        assert!(segment(&at(&[0.0, 1.0, 2.0]), 2.0, 5).is_empty());
        assert!(segment(&[], 2.0, 1).is_empty());
    }

    #[test]
    fn periodic_train_scores_one() {
        let t = register(&at(&[0.0, 0.5, 1.0, 1.5, 2.0]), &RegisterParams::from(&PtConfig::default())).unwrap();
        assert_eq!(t.ipi_cv, 0.0);
        assert_eq!(t.registration_score, 1.0);
        assert!((t.ipi_mean_s - 0.5).abs() < 1e-9);
    }

    #[test]
    fn short_trains_are_rejected() {
        let p = RegisterParams::from(&PtConfig::default());
        assert_eq!(register(&at(&[0.0, 0.5]), &p).unwrap_err().reason(), "too_few_ipis");
        assert_eq!(register(&at(&[]), &p).unwrap_err().reason(), "too_few_ipis");
    }

    #[test]
    fn out_of_range_and_long_trains() {
        let p = RegisterParams::from(&PtConfig::default());
        assert_eq!(register(&at(&[0.0, 0.05, 0.1, 0.15]), &p).unwrap_err().reason(), "ipi_out_of_range");
        let long: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        assert_eq!(register(&at(&long), &p).unwrap_err().reason(), "too_long");
    }

    #[test]
    fn event_carries_full_feature_vector() {
        let t = register(&at(&[0.0, 0.5, 1.0, 1.5, 2.0]), &RegisterParams::from(&PtConfig::default())).unwrap();
        let e = t.into_event("a", 2).event;
        assert_eq!(e.features.len(), FEATURE_NAMES.len());
        assert_eq!(e.features["pulse_count"], 5.0);
        assert!((e.duration_s() - 2.1).abs() < 1e-3);
        assert_eq!(e.algorithm_id, ALGORITHM_ID);
        assert_eq!(e.score, 1.0);
    }

    #[test]
    fn robust_floor_ignores_outliers() {
        let mut xs = vec![0.0; 100];
        xs[3] = 1000.0;
        xs[50] = -1000.0;
        assert_eq!(robust_floor(&xs), (0.0, 0.0));
    }

    fn brute_partition(times: &[f64], gap: f64) -> Vec<Vec<f64>> {
        // Split at every oversized gap, independently of the greedy loop.
        let cuts: Vec<usize> = (1..times.len()).filter(|&i| times[i] - times[i - 1] > gap).collect();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(times.len());
        bounds.windows(2).map(|w| times[w[0]..w[1]].to_vec()).filter(|g| !g.is_empty()).collect()
    }

    proptest! {
        #[test]
        fn segment_matches_partition(mut gaps in prop::collection::vec(0.01f64..6.0, 0..60), gap_max in 0.5f64..4.0, n_min in 1usize..8) {
            let mut t = 0.0;
            let times: Vec<f64> = gaps.drain(..).map(|g| { t += g; (t * 1e3).round() / 1e3 }).collect();
            let got: Vec<Vec<f64>> = segment(&at(&times), gap_max, n_min)
                .iter()
                .map(|g| g.iter().map(|p| (p.onset.seconds_since(pulse_at(0.0).onset) * 1e3).round() / 1e3).collect())
                .collect();
            let want: Vec<Vec<f64>> = brute_partition(&times, gap_max).into_iter().filter(|g| g.len() >= n_min).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn jitter_never_raises_score(devs in prop::collection::vec(-1.0f64..1.0, 4..30), a in 0.0f64..0.2, extra in 0.0f64..0.2) {
            let m = devs.iter().sum::<f64>() / devs.len() as f64;
            let d: Vec<f64> = devs.iter().map(|x| x - m).collect();
            let build = |amp: f64| {
                let mut t = 0.0;
                let mut times = vec![0.0];
                for x in &d { t += 0.5 * (1.0 + amp * x); times.push(t); }
                times
            };
            let p = RegisterParams { max_duration_s: 1e9, ..RegisterParams::from(&PtConfig::default()) };
            let s = |amp: f64| register(&at(&build(amp)), &p).map(|t| t.registration_score).unwrap_or(0.0);
            prop_assert!(s(a + extra) <= s(a) + 1e-6);
        }

        #[test]
        fn shift_equivariance(gaps in prop::collection::vec(0.3f64..0.6, 4..15), shift_ms in -100_000i64..100_000) {
            let mut t = 0.0;
            let times: Vec<f64> = std::iter::once(0.0).chain(gaps.iter().map(|g| { t += g; t })).collect();
            let base = at(&times);
            let moved: Vec<Pulse> = base.iter().map(|p| Pulse { onset: p.onset + shift_ms * 1000, ..p.clone() }).collect();
            let p = RegisterParams::from(&PtConfig::default());
            let (a, b) = (register(&base, &p), register(&moved, &p));
            prop_assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(b.t0() - a.t0(), shift_ms * 1000);
                prop_assert_eq!(b.t1() - a.t1(), shift_ms * 1000);
                prop_assert!((a.registration_score - b.registration_score).abs() < 1e-9);
            }
        }
    }
}
