//! Executing one task: read the block's audio and run its detector.

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::{BatchConfig, TaskSpec};
use crate::archive::{index_archive, ArchiveError, ArchiveIndex, NamingConfig};
use crate::event::DetectionEvent;
use crate::fmdetect::train::{train_model, FmTrainingConfig};
use crate::fmdetect::{detect_fm, FmAlgorithm, FmConfig, FmError};
use crate::mlp::MlpModel;
use crate::ptdetect::{self, PtConfig, PtError};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Fm(#[from] FmError),
    #[error(transparent)]
    Pt(#[from] PtError),
    #[error("index {path}: {reason}")]
    Index { path: PathBuf, reason: String },
    #[error("model {path}: {reason}")]
    Model { path: PathBuf, reason: String },
    #[error("task names unknown project '{0}'")]
    UnknownProject(String),
    #[error("project '{project}' has no detector '{algorithm}'")]
    UnknownAlgorithm { project: String, algorithm: String },
}

/// Read each project's saved index, or index its root when none is given.
pub fn load_indexes(batch: &BatchConfig) -> Result<BTreeMap<String, ArchiveIndex>, RunnerError> {
    let mut out = BTreeMap::new();
    for (name, p) in &batch.projects {
        let index = match &p.manifest {
            Some(path) => {
                let err = |reason: String| RunnerError::Index { path: path.clone(), reason };
                let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
                ArchiveIndex::from_json(&text).map_err(|e| err(e.to_string()))?
            }
            None => index_archive(&p.root, p.naming.as_ref().unwrap_or(&NamingConfig::default()))?,
        };
        out.insert(name.clone(), index);
    }
    Ok(out)
}

/// Classifier per algorithm id.
type FmModels = BTreeMap<&'static str, (FmAlgorithm, MlpModel)>;

struct ProjectRuntime {
    index: ArchiveIndex,
    fm: Option<(FmConfig, FmModels)>,
    pt: Option<PtConfig>,
}

/// Everything a worker needs to execute tasks: indexes, detector settings
/// and trained classifiers. Immutable once built.
pub struct DetectorRunner {
    projects: BTreeMap<String, ProjectRuntime>,
}

impl DetectorRunner {
    /// Load configured models; algorithms without one get a model trained on
    /// synthetic data with `seed`.
    pub fn new(batch: &BatchConfig, indexes: BTreeMap<String, ArchiveIndex>, seed: u64) -> Result<Self, RunnerError> {
        let mut projects = BTreeMap::new();
        let mut trained: BTreeMap<(FmAlgorithm, String), MlpModel> = BTreeMap::new();
        for (name, mut index) in indexes {
            let p = batch.projects.get(&name).ok_or_else(|| RunnerError::UnknownProject(name.clone()))?;
            if index.root.is_relative() || !index.root.exists() {
                index.root = p.root.clone();
            }
            let fm = match &p.fmdetect {
                None => None,
                Some(section) => {
                    let mut models = BTreeMap::new();
                    for &alg in &section.algorithms {
                        let model = match &section.model {
                            Some(path) => {
                                let err = |reason: String| RunnerError::Model { path: path.clone(), reason };
                                let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
                                serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
                            }
                            None => {
                                // Projects sharing a detector configuration share the trained model.
                                let key = (alg, serde_json::to_string(&section.config).unwrap_or_default());
                                if let Some(m) = trained.get(&key) {
                                    m.clone()
                                } else {
                                    log::info!("training {} classifier for project '{name}' (seed {seed})", alg.id());
                                    let m = train_model(&section.config, alg, &FmTrainingConfig::default(), seed)?;
                                    trained.insert(key, m.clone());
                                    m
                                }
                            }
                        };
                        models.insert(alg.id(), (alg, model));
                    }
                    Some((section.config.clone(), models))
                }
            };
            projects.insert(name, ProjectRuntime { index, fm, pt: p.ptdetect.clone() });
        }
        Ok(Self { projects })
    }

    pub fn index(&self, project: &str) -> Option<&ArchiveIndex> {
        self.projects.get(project).map(|p| &p.index)
    }

    pub fn execute(&self, task: &TaskSpec) -> Result<Vec<DetectionEvent>, RunnerError> {
        let p = self.projects.get(&task.project).ok_or_else(|| RunnerError::UnknownProject(task.project.clone()))?;
        let unknown = || RunnerError::UnknownAlgorithm { project: task.project.clone(), algorithm: task.algorithm_id.clone() };
        let clip = p.index.read_segment(task.channel, task.block.start, task.block.end)?;
        if task.algorithm_id == ptdetect::ALGORITHM_ID {
            let cfg = p.pt.as_ref().ok_or_else(unknown)?;
            let events = ptdetect::detect_pt(&clip, cfg, &task.archive_id)?;
            return Ok(events.into_iter().map(|e| e.event).collect());
        }
        let (cfg, models) = p.fm.as_ref().ok_or_else(unknown)?;
        let (alg, model) = models.get(task.algorithm_id.as_str()).ok_or_else(unknown)?;
        Ok(detect_fm(&clip, cfg, *alg, model, &task.archive_id)?)
    }
}
