//! Layout of a run directory and the small amount of state kept in it.
//!
//! ```text
//! <run>/run.json              latest summary per command
//! <run>/events.csv            merged detections (hk_score filled after rescore)
//! <run>/sources.json          archive indexes backing the events
//! <run>/index/<project>.json
//! <run>/scores.csv            expert scores, append-only
//! <run>/sample.csv            events picked for review
//! <run>/models/hkann.json     latest post-classifier
//! <run>/models/baselines.json
//! <run>/roc.json, roc_<name>.csv
//! <run>/diel.json, diel.csv
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pamflow_core::archive::ArchiveIndex;
use pamflow_core::postclass::Baseline;
use pamflow_core::report::{self, ExportFormat};
use pamflow_core::{DetectionEvent, MlpModel, Timestamp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One archive whose audio backs events in this run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub project: String,
    pub archive_id: String,
    /// Relative to the run directory.
    pub index: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn events_csv(&self) -> PathBuf {
        self.path("events.csv")
    }

    pub fn scores_csv(&self) -> PathBuf {
        self.path("scores.csv")
    }

    pub fn hkann_model(&self) -> PathBuf {
        self.path("models/hkann.json")
    }

    pub fn baselines(&self) -> PathBuf {
        self.path("models/baselines.json")
    }

    /// Events of the run; an absent file means no events yet.
    pub fn load_events(&self) -> Result<Vec<DetectionEvent>> {
        let p = self.events_csv();
        if !p.exists() {
            return Ok(Vec::new());
        }
        report::import_events(&p).with_context(|| format!("reading {}", p.display()))
    }

    pub fn save_events(&self, events: &[DetectionEvent]) -> Result<()> {
        let p = self.events_csv();
        let tmp = p.with_extension("csv.tmp");
        report::export_events(&tmp, events, ExportFormat::Csv).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &p)?;
        Ok(())
    }

    pub fn load_model(&self, path: Option<&Path>) -> Result<Option<MlpModel>> {
        let p = path.map_or_else(|| self.hkann_model(), Path::to_path_buf);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn load_baselines(&self) -> Result<Vec<Baseline>> {
        let p = self.baselines();
        if !p.exists() {
            return Ok(Vec::new());
        }
        read_json(&p)
    }

    pub fn load_sources(&self) -> Result<Vec<(Source, ArchiveIndex)>> {
        let p = self.path("sources.json");
        if !p.exists() {
            return Ok(Vec::new());
        }
        let sources: Vec<Source> = read_json(&p)?;
        sources
            .into_iter()
            .map(|s| {
                let idx = read_json(&self.path(&s.index))?;
                Ok((s, idx))
            })
            .collect()
    }

    /// Record `summary` under `command` in `run.json`, keeping other commands' entries.
    pub fn record(&self, command: &str, summary: serde_json::Value) -> Result<()> {
        let p = self.path("run.json");
        let mut all: serde_json::Map<String, serde_json::Value> =
            if p.exists() { read_json(&p).unwrap_or_default() } else { Default::default() };
        let mut entry = serde_json::json!({ "finished_at": Timestamp::now().to_iso_millis() });
        if let (Some(e), serde_json::Value::Object(s)) = (entry.as_object_mut(), summary) {
            e.extend(s);
        }
        all.insert(command.to_string(), entry);
        write_json(&p, &all)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Write pretty JSON through a temporary file and rename, so readers never see half a file.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
