//! Slow, obviously-correct reference implementations used to check the
//! optimized code, plus scoring helpers shared by the integration tests and
//! the acceptance report.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;

use pamflow_core::fmdetect::regions::{Mask, Region};
use pamflow_core::mlp::MlpModel;
use pamflow_core::synth::Injection;
use pamflow_core::{DetectionEvent, Timestamp};

/// Direct DFT power of bin `k`, one-sided and scaled like `dsp::stft`.
pub fn dft_power(frame: &[f64], k: usize) -> f64 {
    let n = frame.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &x) in frame.iter().enumerate() {
        let a = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
        re += x * a.cos();
        im += x * a.sin();
    }
    let edge = k == 0 || k == n / 2;
    (re * re + im * im) / n as f64 * if edge { 1.0 } else { 2.0 }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// 8-connected components by breadth-first flood fill, each as a sorted pixel set.
pub fn flood_fill(mask: &Mask, min_area: usize) -> BTreeSet<Vec<(usize, usize)>> {
    let (nf, nb) = (mask.n_frames, mask.n_bins);
    let mut seen = vec![false; nf * nb];
    let mut out = BTreeSet::new();
    for f in 0..nf {
        for b in 0..nb {
            if !mask.get(f, b) || seen[f * nb + b] {
                continue;
            }
            let mut comp = Vec::new();
            let mut q = VecDeque::from([(f, b)]);
            seen[f * nb + b] = true;
            while let Some((cf, cb)) = q.pop_front() {
                comp.push((cf, cb));
                for df in -1i64..=1 {
                    for db in -1i64..=1 {
                        let (nf2, nb2) = (cf as i64 + df, cb as i64 + db);
                        if nf2 < 0 || nb2 < 0 || nf2 >= nf as i64 || nb2 >= nb as i64 {
                            continue;
                        }
                        let (nf2, nb2) = (nf2 as usize, nb2 as usize);
                        if mask.get(nf2, nb2) && !seen[nf2 * nb + nb2] {
                            seen[nf2 * nb + nb2] = true;
                            q.push_back((nf2, nb2));
                        }
                    }
                }
            }
            if comp.len() >= min_area {
                comp.sort_unstable();
                out.insert(comp);
            }
        }
    }
    out
}

pub fn region_sets(regions: &[Region]) -> BTreeSet<Vec<(usize, usize)>> {
    regions.iter().map(|r| r.pixels.clone()).collect()
}

/// ROC by sweeping every distinct threshold and counting from scratch.
/// Returns (threshold, fpr, tpr) with the +infinity corner first.
pub fn brute_roc(scored: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let p = scored.iter().filter(|s| s.1).count() as f64;
    let n = scored.len() as f64 - p;
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut out = vec![(f64::INFINITY, 0.0, 0.0)];
    for t in thresholds {
        let tp = scored.iter().filter(|s| s.1 && s.0 >= t).count() as f64;
        let fp = scored.iter().filter(|s| !s.1 && s.0 >= t).count() as f64;
        out.push((t, fp / n, tp / p));
    }
    out
}

/// Probability that a random positive outscores a random negative, ties counting half.
pub fn mann_whitney_auc(scored: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Central finite-difference gradient of the weighted cross-entropy.
pub fn finite_difference_gradient(model: &MlpModel, xs: &[Vec<f64>], ys: &[f64], ws: &[f64], h: f64) -> Vec<f64> {
    let base = model.params();
    let mut m = model.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            m.set_params(&p);
            let up = m.loss_and_gradient(xs, ys, ws).0;
            p[i] = base[i] - h;
            m.set_params(&p);
            let down = m.loss_and_gradient(xs, ys, ws).0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// ‖a − b‖ / max(‖b‖, tiny).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Event span in seconds from `origin`.
pub fn span_s(e: &DetectionEvent, origin: Timestamp) -> (f64, f64) {
    ((e.t0 - origin) as f64 / 1e6, (e.t1 - origin) as f64 / 1e6)
}

/// Detection counts against ground truth: an injection is found when some
/// event overlaps it in time; an event overlapping no injection is a false positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub found: usize,
    pub injected: usize,
    pub false_positives: usize,
}

impl Match {
    pub fn recall(&self) -> f64 {
        if self.injected == 0 {
            1.0
        } else {
            self.found as f64 / self.injected as f64
        }
    }
}

pub fn match_injections(events: &[DetectionEvent], truth: &[Injection], origin: Timestamp) -> Match {
    let spans: Vec<(f64, f64)> = events.iter().map(|e| span_s(e, origin)).collect();
    let found = truth.iter().filter(|inj| spans.iter().any(|&(a, b)| inj.overlaps(a, b))).count();
    let false_positives = spans.iter().filter(|&&(a, b)| !truth.iter().any(|inj| inj.overlaps(a, b))).count();
    Match { found, injected: truth.len(), false_positives }
}

/// For each injection, how many events overlap it.
pub fn hits_per_injection(events: &[DetectionEvent], truth: &[Injection], origin: Timestamp) -> Vec<usize> {
    truth
        .iter()
        .map(|inj| events.iter().filter(|e| { let (a, b) = span_s(e, origin); inj.overlaps(a, b) }).count())
        .collect()
}

/// One post-classifier trial: expert-score a uniform sample of the event
/// set, train the network and the baselines on it, and measure everything
/// against ground truth on the events nobody scored.
#[derive(Debug, Clone)]
pub struct HkTrial {
    pub seed: u64,
    pub hk_auc: f64,
    pub hk_tpr: f64,
    pub score_tpr: f64,
    pub baseline_auc: Vec<(String, f64)>,
}

pub const HK_FPR: f64 = 0.06;

pub fn hk_trial(seed: u64, scored: usize, label_noise: f64) -> HkTrial {
    use pamflow_core::postclass::{
        build_labeled_set, compare, sample_for_review, train_all_baselines, train_hkann, HkannParams, LabelMapping,
        SampleStrategy,
    };
    use pamflow_core::synth::{simulate_scores, EventSetFixture};
    use std::collections::{HashMap, HashSet};

    let set = EventSetFixture { seed, ..EventSetFixture::default() }.build();
    let truth: HashMap<_, _> = set.events.iter().map(|e| e.event_id).zip(set.truth.iter().copied()).collect();
    let ids = sample_for_review(&set.events, scored, SampleStrategy::Uniform, seed).unwrap();
    let scores = simulate_scores(&truth, &ids, label_noise, "expert", Timestamp::from_ymd_hms(2014, 1, 1, 0, 0, 0), seed);
    let labeled = build_labeled_set(&set.events, &scores, &LabelMapping::default()).unwrap();
    let model = train_hkann(&labeled, &HkannParams::default(), seed).unwrap();
    let baselines = train_all_baselines(&labeled, seed).unwrap();
    let seen: HashSet<_> = ids.iter().copied().collect();
    let held_out: Vec<DetectionEvent> = set.events.iter().filter(|e| !seen.contains(&e.event_id)).cloned().collect();
    let cmp = compare(&held_out, &truth, &model, &baselines).unwrap();
    let c = &cmp.curves;
    HkTrial {
        seed,
        hk_auc: c["hk_ann"].auc,
        hk_tpr: c["hk_ann"].tpr_at_fpr(HK_FPR),
        score_tpr: c["score"].tpr_at_fpr(HK_FPR),
        baseline_auc: c.iter().filter(|(k, _)| *k != "hk_ann" && *k != "score").map(|(k, v)| (k.clone(), v.auc)).collect(),
    }
}

impl HkTrial {
    /// Smallest AUC margin of the network over any baseline.
    pub fn auc_margin(&self) -> f64 {
        self.baseline_auc.iter().map(|(_, a)| self.hk_auc - a).fold(f64::INFINITY, f64::min)
    }

    pub fn tpr_gain(&self) -> f64 {
        self.hk_tpr - self.score_tpr
    }

    pub fn passes(&self) -> bool {
        self.auc_margin() >= 0.02 && self.tpr_gain() >= 0.10
    }
}
