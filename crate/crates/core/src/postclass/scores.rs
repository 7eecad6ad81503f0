//! Expert scores and ground-truth labels on disk.
//!
//! `scores.csv` holds `event_id,score,reviewer_id,scored_at` with ISO-8601
//! UTC times. Appends are flushed and synced before returning. Truth files
//! hold `event_id,label` with labels 0 or 1.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::event::EventId;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertScore {
    pub event_id: EventId,
    pub score: u8,
    pub reviewer_id: String,
    pub scored_at: Timestamp,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

const HEADER: &str = "event_id,score,reviewer_id,scored_at\n";

pub fn read_scores(path: &Path) -> Result<Vec<ExpertScore>, ScoreFileError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let wrap = |source| ScoreFileError::Csv { path: path.display().to_string(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(wrap)?;
    rdr.deserialize().collect::<Result<Vec<ExpertScore>, _>>().map_err(wrap)
}

fn row(s: &ExpertScore) -> Result<String, ScoreFileError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(s)
        .map_err(|source| ScoreFileError::Csv { path: "<memory>".into(), source })?;
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Append one score, writing the header first when the file is new, then
/// flush and fsync so the score survives a crash once this returns.
pub fn append_score(path: &Path, score: &ExpertScore) -> Result<(), ScoreFileError> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut text = String::new();
    if fresh {
        text.push_str(HEADER);
    }
    text.push_str(&row(score)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    f.sync_all()?;
    Ok(())
}

pub fn write_scores(path: &Path, scores: &[ExpertScore]) -> Result<(), ScoreFileError> {
    let mut text = String::from(HEADER);
    for s in scores {
        text.push_str(&row(s)?);
    }
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    event_id: EventId,
    label: u8,
}

pub fn read_truth(path: &Path) -> Result<HashMap<EventId, bool>, ScoreFileError> {
    let wrap = |source| ScoreFileError::Csv { path: path.display().to_string(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(wrap)?;
    let mut out = HashMap::new();
    for r in rdr.deserialize::<TruthRow>() {
        let r = r.map_err(wrap)?;
        out.insert(r.event_id, r.label != 0);
    }
    Ok(out)
}

pub fn write_truth(path: &Path, truth: &[(EventId, bool)]) -> Result<(), ScoreFileError> {
    let mut w = csv::Writer::from_path(path).map_err(|source| ScoreFileError::Csv { path: path.display().to_string(), source })?;
    for &(event_id, label) in truth {
        w.serialize(TruthRow { event_id, label: label as u8 })
            .map_err(|source| ScoreFileError::Csv { path: path.display().to_string(), source })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: u64, score: u8) -> ExpertScore {
        ExpertScore {
            event_id: EventId(id),
            score,
            reviewer_id: "ana, b".into(),
            scored_at: Timestamp::from_ymd_hms(2014, 2, 3, 4, 5, 6).add_seconds(0.123),
        }
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        assert!(read_scores(&p).unwrap().is_empty());
        append_score(&p, &s(1, 5)).unwrap();
        append_score(&p, &s(u64::MAX, 1)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(HEADER));
        assert_eq!(text.matches("event_id").count(), 1);
        assert_eq!(read_scores(&p).unwrap(), vec![s(1, 5), s(u64::MAX, 1)]);
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        write_truth(&p, &[(EventId(7), true), (EventId(8), false)]).unwrap();
        let t = read_truth(&p).unwrap();
        assert!(t[&EventId(7)]);
        assert!(!t[&EventId(8)]);
    }
}
