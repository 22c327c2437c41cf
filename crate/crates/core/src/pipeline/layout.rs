use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::checkpoint::write_atomic;

pub const CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = ".lock";
pub const STAGES_DIR: &str = "stages";
pub const ENHANCER_CKPT: &str = "enhancer.ckpt";
pub const RANKER_CKPT: &str = "ranker.ckpt";
pub const PRISTINE_CKPT: &str = "pristine.ckpt";
pub const INTERMEDIATES_DIR: &str = "intermediates";
pub const OUTPUTS_DIR: &str = "outputs";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const SELECTED_FILE: &str = "selected.jsonl";
pub const STATUS_FILE: &str = "status.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PRETRAIN_FILE: &str = "pretrain.json";
pub const BOOTSTRAP_FILE: &str = "bootstrap.json";

/// Progress of one stage; transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Generated,
    Selected,
    Voting,
    Labeled,
    RankerTrained,
    EnhancerTuned,
}

/// Contents of `status.json`. Paths are relative to the stage directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageState {
    pub stage: u32,
    pub status: StageStatus,
    pub outputs: String,
    pub pairs: String,
    pub selected: String,
    pub votes: String,
    pub labels: String,
    pub enhancer: String,
    pub ranker: String,
    /// The enhancer this stage produces, relative to the stage directory.
    pub next_enhancer: String,
}

impl StageState {
    pub fn new(stage: u32, status: StageStatus) -> Self {
        Self {
            stage,
            status,
            outputs: OUTPUTS_DIR.into(),
            pairs: PAIRS_FILE.into(),
            selected: SELECTED_FILE.into(),
            votes: crate::annotation::VOTES_FILE.into(),
            labels: crate::annotation::LABELS_FILE.into(),
            enhancer: ENHANCER_CKPT.into(),
            ranker: RANKER_CKPT.into(),
            next_enhancer: format!("../{}/{ENHANCER_CKPT}", stage + 1),
        }
    }
}

/// Paths inside a work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn stage_dir(&self, n: u32) -> PathBuf {
        self.root.join(STAGES_DIR).join(n.to_string())
    }

    pub fn enhancer(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(ENHANCER_CKPT)
    }

    pub fn ranker(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(RANKER_CKPT)
    }

    pub fn pristine(&self) -> PathBuf {
        self.stage_dir(0).join(PRISTINE_CKPT)
    }

    pub fn outputs(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(OUTPUTS_DIR)
    }

    pub fn pairs(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(PAIRS_FILE)
    }

    pub fn selected(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(SELECTED_FILE)
    }

    pub fn status_path(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(STATUS_FILE)
    }

    pub fn metrics(&self, n: u32) -> PathBuf {
        self.stage_dir(n).join(METRICS_FILE)
    }

    pub fn status(&self, n: u32) -> Result<Option<StageState>, PipelineError> {
        let path = self.status_path(n);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&std::fs::read(&path)?)?))
    }

    pub(crate) fn set_status(&self, n: u32, status: StageStatus) -> Result<(), PipelineError> {
        write_json(&self.status_path(n), &StageState::new(n, status))
    }

    /// The stage currently collecting votes, if any.
    pub fn voting_stage(&self) -> Result<Option<u32>, PipelineError> {
        let mut n = 1;
        while let Some(s) = self.status(n)? {
            if s.status == StageStatus::Voting {
                return Ok(Some(n));
            }
            n += 1;
        }
        Ok(None)
    }
}

/// Exclusive ownership of a work directory, released on drop.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(root: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(PipelineError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = WorkdirLock::acquire(dir.path()).unwrap();
        assert!(matches!(WorkdirLock::acquire(dir.path()), Err(PipelineError::Locked(_))));
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        WorkdirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn status_order_and_wire_names() {
        assert!(StageStatus::Generated < StageStatus::Voting);
        assert!(StageStatus::RankerTrained < StageStatus::EnhancerTuned);
        assert_eq!(serde_json::to_string(&StageStatus::RankerTrained).unwrap(), "\"ranker_trained\"");
    }

    #[test]
    fn voting_stage_is_found() {
        let dir = tempfile::tempdir().unwrap();
        let w = Workdir::new(dir.path());
        assert_eq!(w.voting_stage().unwrap(), None);
        for (n, s) in [(1, StageStatus::EnhancerTuned), (2, StageStatus::Voting)] {
            std::fs::create_dir_all(w.stage_dir(n)).unwrap();
            w.set_status(n, s).unwrap();
        }
        assert_eq!(w.voting_stage().unwrap(), Some(2));
        assert_eq!(w.status(2).unwrap().unwrap().next_enhancer, "../3/enhancer.ckpt");
    }
}
