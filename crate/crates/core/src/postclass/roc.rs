//! Receiver operating characteristic curves with tie grouping.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RocError {
    #[error("ROC needs both positive and negative examples ({positives} positive, {negatives} negative)")]
    OneClass { positives: usize, negatives: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive. `None` is the +infinity
    /// threshold of the (0, 0) corner.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// One point per distinct score, thresholds descending. All examples sharing
/// a score cross the threshold together, so ties become diagonal segments.
pub fn roc(scored: &[(f64, bool)]) -> Result<RocCurve, RocError> {
    if let Some(&(s, _)) = scored.iter().find(|(s, _)| !s.is_finite()) {
        return Err(RocError::NonFinite(s));
    }
    let positives = scored.iter().filter(|(_, y)| *y).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(RocError::OneClass { positives, negatives });
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint { threshold: None, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: Some(s), fpr: fp as f64 / n, tpr: tp as f64 / p });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc, positives, negatives })
}

impl RocCurve {
    /// Largest true-positive rate reachable at `fpr`, interpolating linearly
    /// between curve points.
    pub fn tpr_at_fpr(&self, fpr: f64) -> f64 {
        let mut best: f64 = 0.0;
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if fpr < a.fpr || fpr > b.fpr {
                continue;
            }
            let v = if b.fpr == a.fpr { b.tpr } else { a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr) };
            best = best.max(v);
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let t = p.threshold.map_or_else(|| "inf".to_string(), |t| t.to_string());
            s.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let r = roc(&[(0.9, true), (0.8, true), (0.2, false), (0.1, false)]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first().unwrap().fpr, 0.0);
        assert_eq!((r.points.last().unwrap().fpr, r.points.last().unwrap().tpr), (1.0, 1.0));
        assert_eq!(r.tpr_at_fpr(0.0), 1.0);
    }

    #[test]
    fn all_tied_is_the_diagonal() {
        let r = roc(&[(0.3, true), (0.3, false), (0.3, true), (0.3, false)]).unwrap();
        assert_eq!(r.points.len(), 2);
        assert_eq!(r.auc, 0.5);
        assert!((r.tpr_at_fpr(0.06) - 0.06).abs() < 1e-12);
    }

    #[test]
    fn one_class_and_nan_rejected() {
        assert_eq!(roc(&[(0.1, true)]), Err(RocError::OneClass { positives: 1, negatives: 0 }));
        assert!(matches!(roc(&[(f64::NAN, true), (0.0, false)]), Err(RocError::NonFinite(_))));
    }

    #[test]
    fn csv_has_header_and_every_point() {
        let r = roc(&[(0.9, true), (0.1, false)]).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("threshold,fpr,tpr\ninf,0,0\n"));
        assert_eq!(csv.lines().count(), 1 + r.points.len());
    }
}
