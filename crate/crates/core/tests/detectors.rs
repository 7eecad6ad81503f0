//! Detectors run end to end on synthetic recordings with known truth.

mod oracles;

use std::sync::OnceLock;

use oracles::*;
use pamflow_core::fmdetect::train::{train_model, FmTrainingConfig};
use pamflow_core::fmdetect::{detect_fm, FmAlgorithm, FmConfig};
use pamflow_core::mlp::MlpModel;
use pamflow_core::ptdetect::{detect_pt_report, register, PtConfig, Pulse, RegisterParams};
use pamflow_core::synth::{PulseTrainFixture, UpsweepFixture};
use pamflow_core::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn origin() -> Timestamp {
    Timestamp::from_ymd_hms(2013, 3, 1, 0, 0, 0)
}

fn cra_model() -> &'static MlpModel {
    static M: OnceLock<MlpModel> = OnceLock::new();
    M.get_or_init(|| train_model(&FmConfig::default(), FmAlgorithm::Cra, &FmTrainingConfig::default(), 0).unwrap())
}

#[test]
fn upsweeps_are_found_in_a_short_recording() {
    let fx = UpsweepFixture { duration_s: 600.0, n_calls: 10, seed: 21, ..UpsweepFixture::default() };
    let sig = fx.build();
    let events = detect_fm(&sig.clip(origin()), &FmConfig::default(), FmAlgorithm::Cra, cra_model(), "a").unwrap();
    let m = match_injections(&events, &sig.injections, origin());
    assert!(m.recall() >= 0.9, "{m:?}");
    assert!(m.false_positives <= 1, "{m:?}");
    for e in &events {
        assert!(e.score >= 0.5 && e.score <= 1.0);
        assert_eq!(e.algorithm_id, "cra");
        assert!(!e.features.is_empty());
    }
}

#[test]
fn scaling_the_recording_changes_nothing() {
    let fx = UpsweepFixture { duration_s: 300.0, n_calls: 5, seed: 22, ..UpsweepFixture::default() };
    let sig = fx.build();
    let cfg = FmConfig::default();
    let base = detect_fm(&sig.clip(origin()), &cfg, FmAlgorithm::Cra, cra_model(), "a").unwrap();
    assert!(!base.is_empty());
    for g in [0.25, 4.0] {
        let scaled = detect_fm(&sig.with_gain(g).clip(origin()), &cfg, FmAlgorithm::Cra, cra_model(), "a").unwrap();
        let spans: Vec<_> = scaled.iter().map(|e| (e.t0, e.t1)).collect();
        assert_eq!(spans, base.iter().map(|e| (e.t0, e.t1)).collect::<Vec<_>>(), "gain {g}");
    }
}

#[test]
fn noise_alone_gives_few_fm_detections() {
    let fx = UpsweepFixture { duration_s: 600.0, n_calls: 0, seed: 23, ..UpsweepFixture::default() };
    let sig = fx.build();
    let events = detect_fm(&sig.clip(origin()), &FmConfig::default(), FmAlgorithm::Cra, cra_model(), "a").unwrap();
    // 5 per hour allowed; ten minutes should see at most one.
    assert!(events.len() <= 1, "{} detections in noise", events.len());
}

#[test]
fn pulse_trains_are_found_with_their_interval() {
    let fx = PulseTrainFixture { duration_s: 900.0, n_trains: 8, seed: 31, ..PulseTrainFixture::default() };
    let sig = fx.build();
    let report = detect_pt_report(&sig.signal.clip(origin()), &PtConfig::default(), "a").unwrap();
    let events: Vec<_> = report.events.iter().map(|e| e.event.clone()).collect();
    let m = match_injections(&events, &sig.trains, origin());
    assert_eq!(m.found, m.injected, "{m:?}");
    for e in &report.events {
        let (a, b) = span_s(&e.event, origin());
        if sig.trains.iter().any(|t| t.overlaps(a, b)) {
            assert!((e.ipi_mean_s - fx.ipi_s).abs() / fx.ipi_s < 0.05, "ipi {}", e.ipi_mean_s);
            assert!(e.ipi_cv < 0.1);
        }
    }
}

fn poisson_group(rate: f64, n: usize, r: &mut ChaCha8Rng) -> Vec<Pulse> {
    let gap = Exp::new(rate).unwrap();
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += gap.sample(r);
            Pulse {
                onset: origin().add_seconds(t),
                width_s: 0.1,
                peak_db: 10.0,
                band: (100.0, 250.0),
                edge_truncated: false,
            }
        })
        .collect()
}

#[test]
fn poisson_groups_rarely_register() {
    let p = RegisterParams::from(&PtConfig::default());
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let trials = 4000;
    let accepted = (0..trials).filter(|i| register(&poisson_group(1.0, 5 + i % 16, &mut r), &p).is_ok()).count();
    let rate = accepted as f64 / trials as f64;
    assert!(rate < 0.05, "acceptance {rate}");
}
