//! Batch planning, pooled execution and deterministic merging.
//!
//! A batch file lists projects, each an archive with its own channels and
//! detector settings:
//!
//! ```toml
//! [project.north]
//! root = "archives/north"      # relative paths resolve against the batch file
//! manifest = "north.index.json" # optional saved index; otherwise root is indexed
//! channels = [0, 1]             # optional; all indexed channels when absent
//! sample_rate_hz = 2000         # optional; every file must match
//! block_s = 3600
//! overlap_s = 10
//!
//! [project.north.fmdetect]
//! algorithms = ["cra", "hog"]
//! model = "models/cra.json"     # optional; single-algorithm only
//! threshold = 0.5
//!
//! [project.north.ptdetect]
//! cv_max = 0.35
//! ```
//!
//! Each (project, channel, algorithm) coverage interval is cut into core
//! blocks of `block_s`, and every task reads its core widened by `overlap_s`
//! on both sides, clipped to the coverage interval.

mod merge;
mod pool;
mod runner;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{ArchiveIndex, NamingConfig};
use crate::fmdetect::{FmAlgorithm, FmConfig};
use crate::ptdetect::{self, PtConfig};
use crate::time::{Interval, MICROS_PER_HOUR, MICROS_PER_SECOND};
#[cfg(test)]
use crate::time::Timestamp;

pub use merge::{merge_dedupe, TaskEvents};
pub use pool::{run, run_with, FailedTask, RunOutcome, RunStats, TaskFailure};
pub use runner::{load_indexes, DetectorRunner, RunnerError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("batch has no [project.<name>] tables")]
    NoProjects,
    #[error("project '{project}': {reason}")]
    Invalid { project: String, reason: String },
}

fn default_block_s() -> f64 {
    3600.0
}

fn default_overlap_s() -> f64 {
    10.0
}

fn default_algorithms() -> Vec<FmAlgorithm> {
    vec![FmAlgorithm::Cra]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmSection {
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<FmAlgorithm>,
    /// Trained classifier; when absent one is trained from synthetic data at startup.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(flatten)]
    pub config: FmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub root: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub channels: Option<Vec<u16>>,
    #[serde(default)]
    pub sample_rate_hz: Option<u32>,
    #[serde(default = "default_block_s")]
    pub block_s: f64,
    #[serde(default = "default_overlap_s")]
    pub overlap_s: f64,
    #[serde(default)]
    pub naming: Option<NamingConfig>,
    #[serde(default)]
    pub fmdetect: Option<FmSection>,
    #[serde(default)]
    pub ptdetect: Option<PtConfig>,
}

impl ProjectConfig {
    /// Algorithm ids in planning order.
    pub fn algorithm_ids(&self) -> Vec<&'static str> {
        let mut ids: Vec<&'static str> = self.fmdetect.iter().flat_map(|f| f.algorithms.iter().map(|a| a.id())).collect();
        if self.ptdetect.is_some() {
            ids.push(ptdetect::ALGORITHM_ID);
        }
        ids
    }

    /// Longest event any configured detector can emit.
    pub fn max_event_s(&self) -> f64 {
        let fm = self.fmdetect.as_ref().map_or(0.0, |f| f.config.max_event_s());
        let pt = self.ptdetect.as_ref().map_or(0.0, |p| p.max_event_s());
        fm.max(pt)
    }

    pub fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| Err(ConfigError::Invalid { project: name.into(), reason });
        if !(self.block_s.is_finite() && self.overlap_s.is_finite()) || self.block_s <= 0.0 || self.overlap_s < 0.0 {
            return bad(format!("block_s {} and overlap_s {} must be finite, positive and non-negative", self.block_s, self.overlap_s));
        }
        if self.block_s <= 2.0 * self.overlap_s {
            return bad(format!("block_s {} must exceed twice overlap_s {}", self.block_s, self.overlap_s));
        }
        if self.overlap_s < self.max_event_s() {
            return bad(format!("overlap_s {} is shorter than the longest event ({} s)", self.overlap_s, self.max_event_s()));
        }
        if self.algorithm_ids().is_empty() {
            return bad("no [fmdetect] or [ptdetect] section".into());
        }
        if let Some(fm) = &self.fmdetect {
            if fm.model.is_some() && fm.algorithms.len() != 1 {
                return bad("fmdetect.model needs exactly one entry in fmdetect.algorithms".into());
            }
            let mut seen = fm.algorithms.clone();
            seen.dedup();
            if seen.len() != fm.algorithms.len() {
                return bad("fmdetect.algorithms lists an algorithm twice".into());
            }
        }
        Ok(())
    }

    fn block_micros(&self) -> (i64, i64) {
        ((self.block_s * MICROS_PER_SECOND as f64).round() as i64, (self.overlap_s * MICROS_PER_SECOND as f64).round() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    #[serde(rename = "project")]
    pub projects: BTreeMap<String, ProjectConfig>,
}

impl BatchConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: BatchConfig =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in self.projects.values_mut() {
            fix(&mut p.root);
            p.manifest.iter_mut().for_each(fix);
            if let Some(fm) = &mut p.fmdetect {
                fm.model.iter_mut().for_each(fix);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.projects.is_empty() {
            return Err(ConfigError::NoProjects);
        }
        self.projects.iter().try_for_each(|(name, p)| p.validate(name))
    }
}

/// One block of one channel for one algorithm.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub project: String,
    pub archive_id: String,
    pub channel: u16,
    pub algorithm_id: String,
    /// The part of the coverage this task is accountable for.
    pub core: Interval,
    /// What the task reads: the core plus overlap margins.
    pub block: Interval,
    pub attempt: u32,
}

impl TaskSpec {
    fn new(project: &str, archive_id: &str, channel: u16, algorithm_id: &str, core: Interval, block: Interval) -> Self {
        let key = format!(
            "{project}\u{1f}{archive_id}\u{1f}{channel}\u{1f}{algorithm_id}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}",
            core.start.micros(),
            core.end.micros(),
            block.start.micros(),
            block.end.micros()
        );
        let digest = Sha256::digest(key.as_bytes());
        let task_id = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Self {
            task_id,
            project: project.into(),
            archive_id: archive_id.into(),
            channel,
            algorithm_id: algorithm_id.into(),
            core,
            block,
            attempt: 0,
        }
    }

    pub fn core_hours(&self) -> f64 {
        self.core.hours()
    }

    /// Tasks sharing this key tile one channel's coverage for one algorithm.
    pub fn stream_key(&self) -> (&str, u16, &str) {
        (&self.project, self.channel, &self.algorithm_id)
    }
}

/// Cut `[start, end)` into cores of `block` micros with `overlap` margins.
pub fn tile(coverage: Interval, block: i64, overlap: i64) -> Vec<(Interval, Interval)> {
    let mut out = Vec::new();
    let mut s = coverage.start;
    while s < coverage.end {
        let e = (s + block).min(coverage.end);
        let core = Interval::new(s, e);
        let wide = Interval::new((s + -overlap).max(coverage.start), (e + overlap).min(coverage.end));
        out.push((core, wide));
        s = e;
    }
    out
}

/// Tasks for every project, channel, algorithm and coverage block, in that
/// nesting order with blocks ascending in time.
pub fn plan(batch: &BatchConfig, indexes: &BTreeMap<String, ArchiveIndex>) -> Result<Vec<TaskSpec>, ConfigError> {
    batch.validate()?;
    let mut tasks = Vec::new();
    for (name, p) in &batch.projects {
        let index = indexes.get(name).ok_or_else(|| ConfigError::Invalid {
            project: name.clone(),
            reason: "no archive index".into(),
        })?;
        if let Some(fs) = p.sample_rate_hz {
            if let Some(f) = index.files.iter().find(|f| f.sample_rate_hz != fs) {
                return Err(ConfigError::Invalid {
                    project: name.clone(),
                    reason: format!("{} is sampled at {} Hz, expected {fs} Hz", f.path.display(), f.sample_rate_hz),
                });
            }
        }
        let channels = match &p.channels {
            Some(c) => {
                let mut c = c.clone();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => index.channels(),
        };
        let (block, overlap) = p.block_micros();
        for ch in channels {
            for alg in p.algorithm_ids() {
                for iv in index.coverage_of(ch) {
                    for (core, wide) in tile(*iv, block, overlap) {
                        tasks.push(TaskSpec::new(name, &index.archive_id, ch, alg, core, wide));
                    }
                }
            }
        }
    }
    Ok(tasks)
}

/// Σ core lengths, in whole microseconds so tiling sums stay exact.
pub fn coverage_micros(tasks: &[TaskSpec]) -> i64 {
    tasks.iter().map(|t| t.core.len_micros()).sum()
}

pub fn micros_to_hours(us: i64) -> f64 {
    us as f64 / MICROS_PER_HOUR as f64
}

/// Worker count when none is given: the host's available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
