//! Expert-assisted post-classification.
//!
//! Reviewers grade a sample of detections from 1 to 5. Graded events become a
//! labeled set whose rows join the detector's feature vector with cyclic
//! hour-of-day and day-of-year features, and a network trained on that set
//! rescores every event. Baseline classifiers and ROC curves measure whether
//! the rescoring helps.

pub mod baselines;
pub mod roc;
pub mod scores;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::event::{DetectionEvent, EventId};
use crate::mlp::{self, MlpError, MlpModel, Standardizer, TrainParams};
use baselines::{train_baseline, BaselineError, BaselineKind, BaselineModel};
use roc::{roc, RocCurve, RocError};
pub use scores::ExpertScore;

pub const CONTEXT_FEATURES: [&str; 4] = ["hour_sin", "hour_cos", "doy_sin", "doy_cos"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PostclassError {
    #[error("scores reference unknown events: {}", join_ids(.0))]
    UnknownEvents(Vec<EventId>),
    #[error("expert score {0} outside 1..=5")]
    InvalidScore(u8),
    #[error("event {event_id} lacks feature '{feature}'")]
    MissingFeature { event_id: EventId, feature: String },
    #[error("no scored events map to a label")]
    EmptySet,
    #[error("labeled set needs both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("sample size must be positive")]
    NonPositiveSample,
    #[error("requested {requested} events but only {available} exist")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Model(#[from] MlpError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Roc(#[from] RocError),
}

fn join_ids(ids: &[EventId]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// Cyclic encodings of the hour of day and day of year of `t0`.
pub fn context_features(event: &DetectionEvent) -> [f64; 4] {
    let h = event.t0.hour_of_day();
    let d = event.t0.day_of_year0() as f64;
    let (ha, da) = (2.0 * PI * h / 24.0, 2.0 * PI * d / 365.25);
    [ha.sin(), ha.cos(), da.sin(), da.cos()]
}

/// Model input for `event` under `names`; context names are computed from t0.
pub fn feature_vector(event: &DetectionEvent, names: &[String]) -> Result<Vec<f64>, PostclassError> {
    let ctx = context_features(event);
    names
        .iter()
        .map(|n| match CONTEXT_FEATURES.iter().position(|c| c == n) {
            Some(i) => Ok(ctx[i]),
            None => event.features.get(n).copied().ok_or_else(|| PostclassError::MissingFeature {
                event_id: event.event_id,
                feature: n.clone(),
            }),
        })
        .collect()
}

/// The detector's own features (sorted) followed by the context features.
pub fn schema_for(event: &DetectionEvent) -> Vec<String> {
    event
        .features
        .keys()
        .cloned()
        .chain(CONTEXT_FEATURES.iter().map(|s| s.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub negative: Vec<u8>,
    pub positive: Vec<u8>,
}

impl Default for LabelMapping {
    fn default() -> Self {
        Self { negative: vec![1, 2], positive: vec![4, 5] }
    }
}

impl LabelMapping {
    pub fn label(&self, score: u8) -> Option<bool> {
        if self.positive.contains(&score) {
            Some(true)
        } else if self.negative.contains(&score) {
            Some(false)
        } else {
            None
        }
    }
}

/// Active scores after supersession: for each (event, reviewer) the latest
/// `scored_at` wins, and among equal times the later submission.
pub fn active_scores(scores: &[ExpertScore]) -> Vec<ExpertScore> {
    let mut latest: BTreeMap<(EventId, &str), &ExpertScore> = BTreeMap::new();
    for s in scores {
        let key = (s.event_id, s.reviewer_id.as_str());
        match latest.get(&key) {
            Some(prev) if prev.scored_at > s.scored_at => {}
            _ => {
                latest.insert(key, s);
            }
        }
    }
    latest.into_values().cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub event_id: EventId,
    pub reviewer_id: String,
    pub features: Vec<f64>,
    pub label: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub feature_names: Vec<String>,
    pub rows: Vec<LabeledRow>,
    /// Active scores the mapping left out, as (event, score).
    pub excluded: Vec<(EventId, u8)>,
    pub standardizer: Standardizer,
}

impl LabeledSet {
    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.clone()).collect()
    }

    pub fn ys(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.label).count();
        (pos, self.rows.len() - pos)
    }
}

/// One row per active (event, reviewer) score that the mapping labels.
pub fn build_labeled_set(
    events: &[DetectionEvent],
    scores: &[ExpertScore],
    mapping: &LabelMapping,
) -> Result<LabeledSet, PostclassError> {
    if let Some(s) = scores.iter().find(|s| !(1..=5).contains(&s.score)) {
        return Err(PostclassError::InvalidScore(s.score));
    }
    let by_id: HashMap<EventId, &DetectionEvent> = events.iter().map(|e| (e.event_id, e)).collect();
    let unknown: BTreeSet<EventId> = scores.iter().map(|s| s.event_id).filter(|id| !by_id.contains_key(id)).collect();
    if !unknown.is_empty() {
        return Err(PostclassError::UnknownEvents(unknown.into_iter().collect()));
    }
    let active = active_scores(scores);
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut names: Option<Vec<String>> = None;
    for s in &active {
        let ev = by_id[&s.event_id];
        let Some(label) = mapping.label(s.score) else {
            log::info!("excluding event {} with ambiguous score {}", s.event_id, s.score);
            excluded.push((s.event_id, s.score));
            continue;
        };
        let names = names.get_or_insert_with(|| schema_for(ev));
        rows.push(LabeledRow {
            event_id: s.event_id,
            reviewer_id: s.reviewer_id.clone(),
            features: feature_vector(ev, names)?,
            label,
            weight: 1.0,
        });
    }
    let feature_names = names.unwrap_or_default();
    let standardizer = Standardizer::fit(&rows.iter().map(|r| r.features.clone()).collect::<Vec<_>>());
    Ok(LabeledSet { feature_names, rows, excluded, standardizer })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStrategy {
    Uniform,
    /// Equal counts from each decile of detector score rank.
    Stratified,
}

impl std::str::FromStr for SampleStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(SampleStrategy::Uniform),
            "stratified" | "score-stratified" => Ok(SampleStrategy::Stratified),
            _ => Err(format!("unknown strategy '{s}' (uniform | stratified)")),
        }
    }
}

/// Pick `n` events to review, deterministically for a given seed.
///
/// Stratified sampling ranks events by detector score, cuts the ranking into
/// ten deciles and draws `n / 10` from each (the remainder going to the lowest
/// deciles); a decile too small to fill its quota passes the shortfall on to
/// the others in order.
pub fn sample_for_review(
    events: &[DetectionEvent],
    n: usize,
    strategy: SampleStrategy,
    seed: u64,
) -> Result<Vec<EventId>, PostclassError> {
    if n == 0 {
        return Err(PostclassError::NonPositiveSample);
    }
    if n > events.len() {
        return Err(PostclassError::SampleTooLarge { requested: n, available: events.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ordered: Vec<&DetectionEvent> = events.iter().collect();
    match strategy {
        SampleStrategy::Uniform => {
            ordered.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
            ordered.shuffle(&mut rng);
            Ok(ordered[..n].iter().map(|e| e.event_id).collect())
        }
        SampleStrategy::Stratified => {
            ordered.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.event_id.cmp(&b.event_id)));
            let len = ordered.len();
            let mut deciles: Vec<Vec<EventId>> = vec![Vec::new(); 10];
            for (rank, e) in ordered.iter().enumerate() {
                deciles[rank * 10 / len].push(e.event_id);
            }
            for d in deciles.iter_mut() {
                d.shuffle(&mut rng);
            }
            let mut take: Vec<usize> =
                (0..10).map(|i| (n / 10 + usize::from(i < n % 10)).min(deciles[i].len())).collect();
            let mut left = n - take.iter().sum::<usize>();
            for (t, d) in take.iter_mut().zip(&deciles) {
                let extra = (d.len() - *t).min(left);
                *t += extra;
                left -= extra;
            }
            Ok(deciles.iter().zip(&take).flat_map(|(d, &t)| d[..t].iter().copied()).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HkannParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_range: f64,
    pub weight_decay: f64,
}

impl Default for HkannParams {
    fn default() -> Self {
        Self { hidden: 12, learning_rate: 0.5, epochs: 5000, init_range: 0.1, weight_decay: 0.003 }
    }
}

impl From<HkannParams> for TrainParams {
    fn from(h: HkannParams) -> Self {
        TrainParams {
            hidden: h.hidden,
            learning_rate: h.learning_rate,
            epochs: h.epochs,
            init_range: h.init_range,
            weight_decay: h.weight_decay,
        }
    }
}

/// Train the post-classifier on the set's standardized rows. The model keeps
/// the set's standardizer and schema, so rescoring applies the same transform.
pub fn train_hkann(set: &LabeledSet, hyper: &HkannParams, seed: u64) -> Result<MlpModel, PostclassError> {
    if set.rows.is_empty() {
        return Err(PostclassError::EmptySet);
    }
    let (positives, negatives) = set.class_counts();
    if positives == 0 || negatives == 0 {
        return Err(PostclassError::SingleClass { positives, negatives });
    }
    let xs: Vec<Vec<f64>> = set.rows.iter().map(|r| set.standardizer.apply(&r.features)).collect();
    let ys: Vec<f64> = set.rows.iter().map(|r| if r.label { 1.0 } else { 0.0 }).collect();
    let ws: Vec<f64> = set.rows.iter().map(|r| r.weight).collect();
    let mut model = mlp::train(&xs, &ys, Some(&ws), &(*hyper).into(), seed)?;
    model.standardizer = Some(set.standardizer.clone());
    model.feature_names = set.feature_names.clone();
    Ok(model)
}

/// Attach `hk_score` to every event. The schema is checked for all events
/// before any is modified; scoring itself runs in parallel.
pub fn rescore_all(events: &mut [DetectionEvent], model: &MlpModel) -> Result<(), PostclassError> {
    let rows: Vec<Vec<f64>> = events
        .iter()
        .map(|e| feature_vector(e, &model.feature_names))
        .collect::<Result<_, _>>()?;
    let scores: Vec<f64> = rows.par_iter().map(|x| model.predict(x)).collect::<Result<_, _>>()?;
    for (e, s) in events.iter_mut().zip(scores) {
        e.hk_score = Some(s);
    }
    Ok(())
}

/// A trained baseline together with the schema it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub model: BaselineModel,
}

impl Baseline {
    pub fn train(set: &LabeledSet, kind: BaselineKind, seed: u64) -> Result<Self, PostclassError> {
        let xs: Vec<Vec<f64>> = set.rows.iter().map(|r| set.standardizer.apply(&r.features)).collect();
        let model = train_baseline(kind, &xs, &set.ys(), seed)?;
        Ok(Self { kind, feature_names: set.feature_names.clone(), standardizer: set.standardizer.clone(), model })
    }

    pub fn score(&self, event: &DetectionEvent) -> Result<f64, PostclassError> {
        Ok(self.model.score(&self.standardizer.apply(&feature_vector(event, &self.feature_names)?)))
    }
}

/// ROC curves of the post-classifier, every baseline and the raw detector
/// score over `events`, against `truth` keyed by event id. Events without a
/// truth entry are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub curves: BTreeMap<String, RocCurve>,
}

pub fn compare(
    events: &[DetectionEvent],
    truth: &HashMap<EventId, bool>,
    hkann: &MlpModel,
    baselines: &[Baseline],
) -> Result<Comparison, PostclassError> {
    let judged: Vec<&DetectionEvent> = events.iter().filter(|e| truth.contains_key(&e.event_id)).collect();
    let label = |e: &DetectionEvent| truth[&e.event_id];
    let mut curves = BTreeMap::new();
    let raw: Vec<(f64, bool)> = judged.iter().map(|e| (e.score, label(e))).collect();
    curves.insert("score".to_string(), roc(&raw)?);
    let hk: Vec<(f64, bool)> = judged
        .par_iter()
        .map(|e| Ok((hkann.predict(&feature_vector(e, &hkann.feature_names)?)?, label(e))))
        .collect::<Result<_, PostclassError>>()?;
    curves.insert("hk_ann".to_string(), roc(&hk)?);
    for b in baselines {
        let s: Vec<(f64, bool)> =
            judged.par_iter().map(|e| Ok((b.score(e)?, label(e)))).collect::<Result<_, PostclassError>>()?;
        curves.insert(b.kind.id().to_string(), roc(&s)?);
    }
    Ok(Comparison { curves })
}

pub fn train_all_baselines(set: &LabeledSet, seed: u64) -> Result<Vec<Baseline>, PostclassError> {
    BaselineKind::ALL.iter().map(|&k| Baseline::train(set, k, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Bounds;
    use crate::time::Timestamp;

    fn ev(hour: u32, score: f64, f: f64) -> DetectionEvent {
        let t0 = Timestamp::from_ymd_hms(2013, 1, 5, hour, 0, 0);
        let mut feats = BTreeMap::new();
        feats.insert("ipi_cv".to_string(), f);
        DetectionEvent::new("a", 0, "asr_pt", Bounds { t0, t1: t0.add_seconds(5.0), f_lo: 50.0, f_hi: 90.0 }, score, feats)
    }

    fn sc(e: &DetectionEvent, score: u8, who: &str, sec: u32) -> ExpertScore {
        ExpertScore {
            event_id: e.event_id,
            score,
            reviewer_id: who.into(),
            scored_at: Timestamp::from_ymd_hms(2014, 1, 1, 0, 0, sec),
        }
    }

    #[test]
    fn mapping_excludes_threes() {
        let es = vec![ev(1, 0.1, 0.1), ev(2, 0.2, 0.2), ev(3, 0.3, 0.3)];
        let scores = vec![sc(&es[0], 5, "r", 0), sc(&es[1], 1, "r", 0), sc(&es[2], 3, "r", 0)];
        let set = build_labeled_set(&es, &scores, &LabelMapping::default()).unwrap();
        let labels: Vec<(EventId, bool)> = set.rows.iter().map(|r| (r.event_id, r.label)).collect();
        assert_eq!(labels.len(), 2);
        assert!(labels.contains(&(es[0].event_id, true)));
        assert!(labels.contains(&(es[1].event_id, false)));
        assert_eq!(set.excluded, vec![(es[2].event_id, 3)]);
        assert_eq!(set.feature_names, vec!["ipi_cv", "hour_sin", "hour_cos", "doy_sin", "doy_cos"]);
    }

    #[test]
    fn six_am_context() {
        let c = context_features(&ev(6, 0.5, 0.0));
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
    }

    #[test]
    fn latest_score_wins() {
        let es = vec![ev(1, 0.1, 0.1)];
        let scores = vec![sc(&es[0], 5, "r", 10), sc(&es[0], 1, "r", 20), sc(&es[0], 4, "r", 5)];
        let set = build_labeled_set(&es, &scores, &LabelMapping::default()).unwrap();
        assert_eq!(set.rows.len(), 1);
        assert!(!set.rows[0].label);
        // A second reviewer keeps their own row.
        let mut more = scores.clone();
        more.push(sc(&es[0], 4, "q", 0));
        assert_eq!(build_labeled_set(&es, &more, &LabelMapping::default()).unwrap().rows.len(), 2);
    }

    #[test]
    fn unknown_events_listed() {
        let es = vec![ev(1, 0.1, 0.1)];
        let ghost = ev(2, 0.1, 0.1);
        let err = build_labeled_set(&es, &[sc(&ghost, 5, "r", 0)], &LabelMapping::default()).unwrap_err();
        assert_eq!(err, PostclassError::UnknownEvents(vec![ghost.event_id]));
        assert!(err.to_string().contains(&ghost.event_id.to_string()));
        let bad = build_labeled_set(&es, &[sc(&es[0], 7, "r", 0)], &LabelMapping::default()).unwrap_err();
        assert_eq!(bad, PostclassError::InvalidScore(7));
    }

    fn many(n: usize) -> Vec<DetectionEvent> {
        (0..n)
            .map(|i| {
                let mut e = ev((i % 24) as u32, (i as f64 * 0.618).fract(), i as f64);
                let t0 = e.t0.add_seconds(86_400.0 * (i / 24) as f64);
                e = DetectionEvent::new("a", 0, "asr_pt", Bounds { t0, t1: t0.add_seconds(5.0), f_lo: 50.0, f_hi: 90.0 }, e.score, e.features);
                e
            })
            .collect()
    }

    #[test]
    fn sampling_contracts() {
        let es = many(200);
        let all = sample_for_review(&es, 200, SampleStrategy::Uniform, 3).unwrap();
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 200);
        assert_eq!(all, sample_for_review(&es, 200, SampleStrategy::Uniform, 3).unwrap());
        assert_eq!(sample_for_review(&es, 0, SampleStrategy::Uniform, 3), Err(PostclassError::NonPositiveSample));
        assert!(sample_for_review(&es, 201, SampleStrategy::Uniform, 3).is_err());
    }

    #[test]
    fn stratified_takes_ten_per_decile() {
        let es = many(200);
        let picked = sample_for_review(&es, 100, SampleStrategy::Stratified, 9).unwrap();
        assert_eq!(picked, sample_for_review(&es, 100, SampleStrategy::Stratified, 9).unwrap());
        // Count per decile of score rank, computed independently.
        let mut ranked: Vec<&DetectionEvent> = es.iter().collect();
        ranked.sort_by(|a, b| a.score.total_cmp(&b.score));
        let mut per = [0usize; 10];
        for id in &picked {
            let rank = ranked.iter().position(|e| e.event_id == *id).unwrap();
            per[rank / 20] += 1;
        }
        assert_eq!(per, [10; 10]);
    }

    #[test]
    fn stratified_passes_shortfall_on() {
        let es = many(25);
        let picked = sample_for_review(&es, 25, SampleStrategy::Stratified, 1).unwrap();
        assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), 25);
    }

    #[test]
    fn rescore_checks_schema_and_scores_half_with_zero_model() {
        let mut es = many(30);
        let mut m = MlpModel::zeros(5, 3);
        m.feature_names = schema_for(&es[0]);
        rescore_all(&mut es, &m).unwrap();
        assert!(es.iter().all(|e| e.hk_score == Some(0.5)));
        m.feature_names[0] = "pulse_count".into();
        let err = rescore_all(&mut es, &m).unwrap_err();
        assert!(matches!(err, PostclassError::MissingFeature { ref feature, .. } if feature == "pulse_count"));
    }
}
