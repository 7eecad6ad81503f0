//! Diel aggregation and stable event exports.
//!
//! `events.csv` columns are `event_id, channel, algorithm_id, t0, t1, f_lo,
//! f_hi, score, hk_score`, followed by one `f_<name>` column per feature name
//! found in the set, sorted by name. Times are ISO-8601 UTC with milliseconds,
//! `hk_score` and absent features are empty cells, and numbers use the
//! shortest representation that parses back to the same value. The JSONL
//! form holds one serialized event per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::event::{DetectionEvent, EventId};
use crate::time::Timestamp;

pub const EVENT_COLUMNS: [&str; 9] = ["event_id", "channel", "algorithm_id", "t0", "t1", "f_lo", "f_hi", "score", "hk_score"];
pub const FEATURE_PREFIX: &str = "f_";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("event {event_id} has no {field}")]
    MissingField { event_id: EventId, field: ScoreField },
    #[error("threshold {0} is not a number")]
    BadThreshold(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("events.csv header: {0}")]
    Header(String),
    #[error("row {row}, column {column}: {reason}")]
    Cell { row: usize, column: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreField {
    Score,
    HkScore,
}

impl ScoreField {
    pub fn id(self) -> &'static str {
        match self {
            ScoreField::Score => "score",
            ScoreField::HkScore => "hk_score",
        }
    }

    pub fn value(self, e: &DetectionEvent) -> Option<f64> {
        match self {
            ScoreField::Score => Some(e.score),
            ScoreField::HkScore => e.hk_score,
        }
    }
}

impl fmt::Display for ScoreField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ScoreField {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "score" => Ok(ScoreField::Score),
            "hk_score" => Ok(ScoreField::HkScore),
            _ => Err(format!("unknown score field '{s}' (expected score or hk_score)")),
        }
    }
}

/// Event counts per UTC day and hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DielGrid {
    pub dates: Vec<NaiveDate>,
    /// One row of 24 hourly counts per entry of `dates`.
    pub counts: Vec<[u32; 24]>,
    pub field: ScoreField,
    pub threshold: f64,
    /// Shared algorithm of the counted events, `None` when the set is mixed or empty.
    pub algorithm_id: Option<String>,
}

impl DielGrid {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    pub fn cell(&self, date: NaiveDate, hour: usize) -> u32 {
        self.dates.binary_search(&date).map_or(0, |i| self.counts[i][hour])
    }

    /// `date,h00,...,h23`, one row per day.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("date");
        for h in 0..24 {
            s.push_str(&format!(",h{h:02}"));
        }
        s.push('\n');
        for (d, row) in self.dates.iter().zip(&self.counts) {
            s.push_str(&d.format("%Y-%m-%d").to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Count events with `field >= threshold` into `(utc_date(t0), utc_hour(t0))`.
/// Rows span every day from the first to the last event of the set, whether
/// or not anything on that day passes, so grids at different thresholds line
/// up cell for cell.
pub fn diel(events: &[DetectionEvent], field: ScoreField, threshold: f64) -> Result<DielGrid, ReportError> {
    if threshold.is_nan() {
        return Err(ReportError::BadThreshold(threshold));
    }
    let mut values = Vec::with_capacity(events.len());
    for e in events {
        let v = field.value(e).ok_or(ReportError::MissingField { event_id: e.event_id, field })?;
        values.push(v);
    }
    let algorithms: BTreeSet<&str> = events.iter().map(|e| e.algorithm_id.as_str()).collect();
    let algorithm_id = (algorithms.len() == 1).then(|| algorithms.into_iter().next().unwrap_or_default().to_string());
    let mut grid = DielGrid { dates: Vec::new(), counts: Vec::new(), field, threshold, algorithm_id };
    let (Some(first), Some(last)) = (events.iter().map(|e| e.t0.date()).min(), events.iter().map(|e| e.t0.date()).max())
    else {
        return Ok(grid);
    };
    grid.dates = first.iter_days().take_while(|d| *d <= last).collect();
    grid.counts = vec![[0; 24]; grid.dates.len()];
    for (e, v) in events.iter().zip(values) {
        if v >= threshold {
            let day = (e.t0.date() - first).num_days() as usize;
            grid.counts[day][e.t0.utc_hour() as usize] += 1;
        }
    }
    Ok(grid)
}

fn feature_columns(events: &[DetectionEvent]) -> Vec<String> {
    let names: BTreeSet<&String> = events.iter().flat_map(|e| e.features.keys()).collect();
    names.into_iter().cloned().collect()
}

pub fn write_events_csv<W: Write>(out: W, events: &[DetectionEvent]) -> Result<(), ReportError> {
    let features = feature_columns(events);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = EVENT_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(features.iter().map(|f| format!("{FEATURE_PREFIX}{f}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for e in events {
        rec.clear();
        rec.push(e.event_id.to_string());
        rec.push(e.channel.to_string());
        rec.push(e.algorithm_id.clone());
        rec.push(e.t0.to_iso_millis());
        rec.push(e.t1.to_iso_millis());
        rec.push(e.f_lo.to_string());
        rec.push(e.f_hi.to_string());
        rec.push(e.score.to_string());
        rec.push(e.hk_score.map(|v| v.to_string()).unwrap_or_default());
        rec.extend(features.iter().map(|f| e.features.get(f).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv<R: io::Read>(input: R) -> Result<Vec<DetectionEvent>, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < EVENT_COLUMNS.len() || header.iter().zip(EVENT_COLUMNS).any(|(a, b)| a != b) {
        return Err(ReportError::Header(format!("expected columns to start with {}", EVENT_COLUMNS.join(","))));
    }
    let mut features = Vec::new();
    for h in header.iter().skip(EVENT_COLUMNS.len()) {
        let name = h
            .strip_prefix(FEATURE_PREFIX)
            .ok_or_else(|| ReportError::Header(format!("feature column '{h}' lacks the '{FEATURE_PREFIX}' prefix")))?;
        features.push(name.to_string());
    }
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |k: usize| rec.get(k).unwrap_or("");
        fn parse<T: FromStr>(row: usize, col: &str, s: &str) -> Result<T, ReportError>
        where
            T::Err: fmt::Display,
        {
            s.parse::<T>().map_err(|e| ReportError::Cell { row, column: col.into(), reason: e.to_string() })
        }
        let mut fs = BTreeMap::new();
        for (k, name) in features.iter().enumerate() {
            let s = cell(EVENT_COLUMNS.len() + k);
            if !s.is_empty() {
                fs.insert(name.clone(), parse::<f64>(row, &header[EVENT_COLUMNS.len() + k], s)?);
            }
        }
        events.push(DetectionEvent {
            event_id: parse(row, "event_id", cell(0))?,
            channel: parse(row, "channel", cell(1))?,
            algorithm_id: cell(2).to_string(),
            t0: parse::<Timestamp>(row, "t0", cell(3))?,
            t1: parse::<Timestamp>(row, "t1", cell(4))?,
            f_lo: parse(row, "f_lo", cell(5))?,
            f_hi: parse(row, "f_hi", cell(6))?,
            score: parse(row, "score", cell(7))?,
            hk_score: match cell(8) {
                "" => None,
                s => Some(parse(row, "hk_score", s)?),
            },
            features: fs,
        });
    }
    Ok(events)
}

pub fn write_events_jsonl<W: Write>(mut out: W, events: &[DetectionEvent]) -> Result<(), ReportError> {
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events_jsonl<R: io::Read>(input: R) -> Result<Vec<DetectionEvent>, ReportError> {
    let mut events = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|source| ReportError::Json { line: i + 1, source })?);
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl ExportFormat {
    /// Chosen from the file extension; anything but `.jsonl` is CSV.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("jsonl") => ExportFormat::Jsonl,
            _ => ExportFormat::Csv,
        }
    }
}

/// Write the set to `path`, syncing before returning.
pub fn export_events(path: &Path, events: &[DetectionEvent], format: ExportFormat) -> Result<(), ReportError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        ExportFormat::Csv => write_events_csv(&mut w, events)?,
        ExportFormat::Jsonl => write_events_jsonl(&mut w, events)?,
    }
    let file = w.into_inner().map_err(|e| e.into_error())?;
    file.sync_all()?;
    Ok(())
}

pub fn import_events(path: &Path) -> Result<Vec<DetectionEvent>, ReportError> {
    let file = File::open(path)?;
    match ExportFormat::for_path(path) {
        ExportFormat::Csv => read_events_csv(BufReader::new(file)),
        ExportFormat::Jsonl => read_events_jsonl(file),
    }
}
