use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use super::data::Datasets;
use super::eval::{annotators, fresh_accuracy, mean_ranker_sigmoid, mean_utility, preference_rate, render};
use super::layout::{
    read_jsonl, write_json, write_jsonl, StageStatus, Workdir, WorkdirLock, BOOTSTRAP_FILE, INTERMEDIATES_DIR, PRETRAIN_FILE,
};
use super::pairs::{generate_pairs, select_pairs, PairRecord};
use super::PipelineError;
use crate::annotation::{LabelStore, SimulatedAnnotator};
use crate::bootstrap::{build_bootstrap_dataset, fit_pristine, PristineModel};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{RunConfig, VoteSource};
use crate::enhancer::{finetune, pretrain, CurveEnhancer, LossReport};
use crate::image::load_image;
use crate::ranker::{prediction_accuracy, train_ranker, LabeledPair, Ranker};
use crate::rng::SeededRng;

/// Steps averaged for the reported start and end fine-tuning losses.
const LOSS_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub loss_first: f64,
    pub loss_last: f64,
    pub intermediates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub pairs: usize,
    pub train_pairs: usize,
    /// Accuracy on the NIQE pairs of held-out inputs.
    pub holdout_accuracy: Option<f64>,
    pub ranker_loss_last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Metrics {
    pub pretrain_loss_first: f64,
    pub pretrain_loss_last: f64,
    pub intermediates: usize,
    pub bootstrap_pairs: usize,
    pub bootstrap_train_pairs: usize,
    /// Initial ranker accuracy on the NIQE pairs of held-out inputs.
    pub bootstrap_holdout_accuracy: Option<f64>,
    pub ranker_loss_last: f64,
    pub finetune_total_first: f64,
    pub finetune_total_last: f64,
    /// Mean sigmoid ranker score of the stage 0 and stage 1 outputs on the training inputs.
    pub ranker_sigmoid_before: f64,
    pub ranker_sigmoid_after: f64,
    /// Mean oracle utility of the stage 0 and stage 1 outputs on validation inputs.
    pub utility_before: f64,
    pub utility_after: f64,
    /// Share of validation inputs where the initial ranker prefers the stage 1 output.
    pub preference_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: u32,
    pub pairs: usize,
    pub selected: usize,
    pub labels_total: usize,
    /// Previous ranker against this stage's labels, before it sees them.
    pub previous_ranker_accuracy: f64,
    /// This stage's ranker against the simulated panel on validation version pairs.
    pub fresh_accuracy: f64,
    pub finetune_total_first: f64,
    pub finetune_total_last: f64,
    pub utility_before: f64,
    pub utility_after: f64,
    pub preference_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub phase1: Phase1Metrics,
    pub stages: Vec<StageMetrics>,
}

impl RunSummary {
    /// Mean validation utility of every enhancer, stage 0 through N.
    pub fn utilities(&self) -> Vec<f64> {
        let mut u = vec![self.phase1.utility_before, self.phase1.utility_after];
        u.extend(self.stages.iter().map(|s| s.utility_after));
        u
    }

    /// Preference rate of each stage's ranker for the enhancer it tuned.
    pub fn preference_rates(&self) -> Vec<f64> {
        let mut p = vec![self.phase1.preference_rate];
        p.extend(self.stages.iter().map(|s| s.preference_rate));
        p
    }
}

fn window_mean(h: &[LossReport], last: bool) -> f64 {
    let n = LOSS_WINDOW.min(h.len()).max(1);
    let slice = if last { &h[h.len().saturating_sub(n)..] } else { &h[..n.min(h.len())] };
    slice.iter().map(|r| r.total).sum::<f64>() / slice.len().max(1) as f64
}

fn last_loss(losses: &[f64]) -> f64 {
    losses.last().copied().unwrap_or(0.0)
}

/// Owns a locked work directory and runs the stages of one experiment.
#[derive(Debug)]
pub struct Pipeline {
    workdir: Workdir,
    config: RunConfig,
    data: Datasets,
    _lock: WorkdirLock,
}

impl Pipeline {
    /// Locks `root`, records `config` as `config.json` (or checks it against
    /// the recorded one) and loads the datasets.
    pub fn open(root: impl AsRef<Path>, config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let root = root.as_ref();
        let lock = WorkdirLock::acquire(root)?;
        let workdir = Workdir::new(root);
        let path = workdir.config();
        if path.exists() {
            let stored = RunConfig::load(&path)?;
            let diff = config_diff(&stored, &config);
            if !diff.is_empty() {
                return Err(PipelineError::ConfigMismatch(diff));
            }
        } else {
            let mut recorded = config.clone();
            recorded.vote_source = VoteSource::Simulated;
            write_json(&path, &recorded)?;
        }
        let data = Datasets::load(&config)?;
        Ok(Self {
            workdir,
            config,
            data,
            _lock: lock,
        })
    }

    /// Opens a work directory with its recorded configuration plus overrides.
    pub fn resume<S: AsRef<str>>(root: impl AsRef<Path>, overrides: &[S]) -> Result<Self, PipelineError> {
        let root = root.as_ref();
        let config = RunConfig::load(Workdir::new(root).config())?.with_overrides(overrides)?;
        Self::open(root, config)
    }

    pub fn workdir(&self) -> &Workdir {
        &self.workdir
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn data(&self) -> &Datasets {
        &self.data
    }

    pub fn enhancer(&self, n: u32) -> Result<CurveEnhancer, PipelineError> {
        Ok(CurveEnhancer::from_checkpoint(&read_checkpoint(self.workdir.enhancer(n))?)?)
    }

    pub fn ranker(&self, n: u32) -> Result<Ranker, PipelineError> {
        Ok(Ranker::from_checkpoint(&read_checkpoint(self.workdir.ranker(n))?)?)
    }

    fn phase1_done(&self) -> Result<bool, PipelineError> {
        Ok(self.workdir.status(0)?.is_some_and(|s| s.status == StageStatus::EnhancerTuned))
    }

    /// Pretrains the stage 0 enhancer and keeps its intermediate versions.
    /// Skipped when its report already exists.
    pub fn pretrain(&self) -> Result<PretrainReport, PipelineError> {
        let w = &self.workdir;
        let report_path = w.stage_dir(0).join(PRETRAIN_FILE);
        if report_path.exists() {
            return Ok(serde_json::from_slice(&std::fs::read(&report_path)?)?);
        }
        let x = &self.data.train.images;
        let dir = w.stage_dir(0).join(INTERMEDIATES_DIR);
        std::fs::create_dir_all(&dir)?;
        info!("pretraining the initial enhancer on {} inputs", x.len());
        let pre = pretrain(x, &self.config.pretrain_config())?;
        write_checkpoint(&pre.enhancer.to_checkpoint(0), w.enhancer(0))?;
        for (i, ck) in pre.intermediates.iter().enumerate() {
            write_checkpoint(ck, dir.join(format!("{i:03}.ckpt")))?;
        }
        let report = PretrainReport {
            loss_first: pre.loss_history.first().copied().unwrap_or(0.0),
            loss_last: last_loss(&pre.loss_history),
            intermediates: pre.intermediates.len(),
        };
        write_json(&report_path, &report)?;
        Ok(report)
    }

    /// Fits the pristine model, labels the pretraining versions by NIQE and
    /// trains the initial ranker on them. Skipped when its report exists.
    pub fn bootstrap_ranker(&self) -> Result<BootstrapReport, PipelineError> {
        let w = &self.workdir;
        let report_path = w.stage_dir(0).join(BOOTSTRAP_FILE);
        if report_path.exists() {
            return Ok(serde_json::from_slice(&std::fs::read(&report_path)?)?);
        }
        let pre = self.pretrain()?;
        let c = &self.config;
        let x = &self.data.train.images;

        info!("fitting the pristine model on {} images", self.data.normal.len());
        let model = fit_pristine(&self.data.normal.images, c.niqe_patch, c.niqe_sharpness_quantile)?;
        write_checkpoint(&model.to_checkpoint(), w.pristine())?;

        let dir = w.stage_dir(0).join(INTERMEDIATES_DIR);
        let mut versions = (0..pre.intermediates)
            .map(|i| Ok(CurveEnhancer::from_checkpoint(&read_checkpoint(dir.join(format!("{i:03}.ckpt")))?)?))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        versions.push(self.enhancer(0)?);
        let set = build_bootstrap_dataset(&versions, x, &model)?;
        let held = holdout(x.len(), c.bootstrap_holdout, c.seed);
        let train_pairs = set.labeled_pairs(|i| !held[i]);
        let test_pairs = set.labeled_pairs(|i| held[i]);
        info!("training the initial ranker on {} NIQE pairs", train_pairs.len());
        let mut g0 = Ranker::new(c.ranker_arch(), c.seed);
        let trained = train_ranker(&mut g0, &train_pairs, &c.ranker_train_config(0))?;
        let holdout_accuracy = if test_pairs.is_empty() {
            None
        } else {
            Some(prediction_accuracy(&g0, &test_pairs)?)
        };
        write_checkpoint(&g0.to_checkpoint(0), w.ranker(0))?;
        let report = BootstrapReport {
            pairs: set.pairs.len(),
            train_pairs: train_pairs.len(),
            holdout_accuracy,
            ranker_loss_last: last_loss(&trained.losses),
        };
        write_json(&report_path, &report)?;
        Ok(report)
    }

    /// Pretraining and the initial ranker, then the stage 1 enhancer
    /// fine-tuned against that ranker. A completed phase is not rerun.
    pub fn run_phase1(&self) -> Result<Phase1Metrics, PipelineError> {
        let w = &self.workdir;
        if self.phase1_done()? {
            return Ok(serde_json::from_slice(&std::fs::read(w.metrics(0))?)?);
        }
        let pre = self.pretrain()?;
        let boot = self.bootstrap_ranker()?;
        let c = &self.config;
        let x = &self.data.train.images;
        let (f0, g0) = (self.enhancer(0)?, self.ranker(0)?);

        info!("fine-tuning the stage 1 enhancer");
        let (f1, history) = finetune(&f0, &g0, x, &c.finetune_config(1))?;
        std::fs::create_dir_all(w.stage_dir(1))?;
        write_checkpoint(&f1.to_checkpoint(1), w.enhancer(1))?;

        let (y0, y1) = (render(&f0, x)?, render(&f1, x)?);
        let v = &self.data.validation.images;
        let (v0, v1) = (render(&f0, v)?, render(&f1, v)?);
        let judge = SimulatedAnnotator::new("oracle", 0.0, c.seed);
        let metrics = Phase1Metrics {
            pretrain_loss_first: pre.loss_first,
            pretrain_loss_last: pre.loss_last,
            intermediates: pre.intermediates,
            bootstrap_pairs: boot.pairs,
            bootstrap_train_pairs: boot.train_pairs,
            bootstrap_holdout_accuracy: boot.holdout_accuracy,
            ranker_loss_last: boot.ranker_loss_last,
            finetune_total_first: window_mean(&history, false),
            finetune_total_last: window_mean(&history, true),
            ranker_sigmoid_before: mean_ranker_sigmoid(&g0, &y0)?,
            ranker_sigmoid_after: mean_ranker_sigmoid(&g0, &y1)?,
            utility_before: mean_utility(&judge, &v0),
            utility_after: mean_utility(&judge, &v1),
            preference_rate: preference_rate(&g0, &v0, &v1)?,
        };
        write_json(&w.metrics(0), &metrics)?;
        w.set_status(0, StageStatus::EnhancerTuned)?;
        Ok(metrics)
    }

    pub fn pristine_model(&self) -> Result<PristineModel, PipelineError> {
        Ok(PristineModel::from_checkpoint(&read_checkpoint(self.workdir.pristine())?)?)
    }

    fn check_ready(&self, n: u32) -> Result<(), PipelineError> {
        if n == 0 {
            return Err(PipelineError::NotReady {
                stage: 0,
                reason: "stage 0 is produced by phase 1".into(),
            });
        }
        if n >= self.config.stages {
            return Err(PipelineError::BeyondLastStage {
                stage: n,
                stages: self.config.stages,
            });
        }
        let prev_done = self.workdir.status(n - 1)?.is_some_and(|s| s.status == StageStatus::EnhancerTuned);
        if !prev_done || !self.workdir.enhancer(n).exists() {
            return Err(PipelineError::NotReady {
                stage: n,
                reason: format!("stage {} is not complete", n - 1),
            });
        }
        Ok(())
    }

    /// Advances stage `n` as far as possible: generate, select, vote, label,
    /// train the ranker on all labels so far, fine-tune the next enhancer.
    /// Every sub-step is persisted before the status moves; a completed
    /// stage is left untouched.
    pub fn run_stage(&self, n: u32) -> Result<StageMetrics, PipelineError> {
        let w = &self.workdir;
        if let Some(s) = w.status(n)? {
            if s.status == StageStatus::EnhancerTuned {
                return Ok(serde_json::from_slice(&std::fs::read(w.metrics(n))?)?);
            }
        }
        self.check_ready(n)?;
        let c = &self.config;
        let dir = w.stage_dir(n);
        loop {
            let status = w.status(n)?.map(|s| s.status);
            match status {
                None => {
                    info!("stage {n}: rendering pairs");
                    let pairs = generate_pairs(
                        &read_checkpoint(w.enhancer(n - 1))?,
                        &read_checkpoint(w.enhancer(n))?,
                        &read_checkpoint(w.ranker(n - 1))?,
                        &self.data.train,
                        n,
                        &dir,
                    )?;
                    write_jsonl(&w.pairs(n), &pairs)?;
                    w.set_status(n, StageStatus::Generated)?;
                }
                Some(StageStatus::Generated) => {
                    let pairs: Vec<PairRecord> = read_jsonl(&w.pairs(n))?;
                    let selected = select_pairs(&pairs, c.top_k)?;
                    info!("stage {n}: selected {} of {} pairs", selected.len(), pairs.len());
                    write_jsonl(&w.selected(n), &selected)?;
                    w.set_status(n, StageStatus::Selected)?;
                }
                Some(StageStatus::Selected) => {
                    LabelStore::open(&dir, c.annotators)?;
                    w.set_status(n, StageStatus::Voting)?;
                }
                Some(StageStatus::Voting) => {
                    if c.vote_source == VoteSource::Simulated {
                        self.simulate_votes(n)?;
                    }
                    let pending = self.pending_pairs(n)?;
                    if !pending.is_empty() {
                        return Err(PipelineError::IncompleteVotes {
                            stage: n,
                            pending: pending.len(),
                        });
                    }
                    w.set_status(n, StageStatus::Labeled)?;
                }
                Some(StageStatus::Labeled) => {
                    let labels = self.accumulated_labels(n)?;
                    info!("stage {n}: training the ranker on {} labels", labels.len());
                    let start = if c.warm_start { n - 1 } else { 0 };
                    let mut g = self.ranker(start)?;
                    train_ranker(&mut g, &labels, &c.ranker_train_config(n))?;
                    write_checkpoint(&g.to_checkpoint(n), w.ranker(n))?;
                    w.set_status(n, StageStatus::RankerTrained)?;
                }
                Some(StageStatus::RankerTrained) => {
                    info!("stage {n}: fine-tuning the stage {} enhancer", n + 1);
                    let metrics = self.tune_and_measure(n)?;
                    write_json(&w.metrics(n), &metrics)?;
                    w.set_status(n, StageStatus::EnhancerTuned)?;
                }
                Some(StageStatus::EnhancerTuned) => {
                    return Ok(serde_json::from_slice(&std::fs::read(w.metrics(n))?)?);
                }
            }
        }
    }

    fn tune_and_measure(&self, n: u32) -> Result<StageMetrics, PipelineError> {
        let w = &self.workdir;
        let c = &self.config;
        let (f_prev, f_cur, g_prev, g) = (self.enhancer(n - 1)?, self.enhancer(n)?, self.ranker(n - 1)?, self.ranker(n)?);
        let x = &self.data.train.images;
        let (f_next, history) = finetune(&f_cur, &g, x, &c.finetune_config(n + 1))?;
        std::fs::create_dir_all(w.stage_dir(n + 1))?;
        write_checkpoint(&f_next.to_checkpoint(n + 1), w.enhancer(n + 1))?;

        let val = &self.data.validation;
        let (vp, vc, vn) = (render(&f_prev, &val.images)?, render(&f_cur, &val.images)?, render(&f_next, &val.images)?);
        let panel = annotators(c);
        let judge = SimulatedAnnotator::new("oracle", 0.0, c.seed);
        let stage_labels = self.stage_labels(n)?;
        let pairs: Vec<PairRecord> = read_jsonl(&w.pairs(n))?;
        Ok(StageMetrics {
            stage: n,
            pairs: pairs.len(),
            selected: read_jsonl::<PairRecord>(&w.selected(n))?.len(),
            labels_total: self.accumulated_labels(n)?.len(),
            previous_ranker_accuracy: prediction_accuracy(&g_prev, &stage_labels)?,
            fresh_accuracy: fresh_accuracy(&g, &panel, n, val, &vp, &vc)?,
            finetune_total_first: window_mean(&history, false),
            finetune_total_last: window_mean(&history, true),
            utility_before: mean_utility(&judge, &vc),
            utility_after: mean_utility(&judge, &vn),
            preference_rate: preference_rate(&g, &vc, &vn)?,
        })
    }

    /// Casts the missing simulated votes of stage `n` and finalizes labels.
    /// Timestamps are a logical clock: the vote's position in the store.
    pub fn simulate_votes(&self, n: u32) -> Result<usize, PipelineError> {
        let dir = self.workdir.stage_dir(n);
        let selected: Vec<PairRecord> = read_jsonl(&self.workdir.selected(n))?;
        let mut store = LabelStore::open(&dir, self.config.annotators)?;
        store.finalize_pending()?;
        let panel = annotators(&self.config);
        let mut cast = 0;
        for rec in &selected {
            if store.label_for(&rec.pair_id).is_some() {
                continue;
            }
            let prev = load_image(dir.join(&rec.image_prev))?;
            let cur = load_image(dir.join(&rec.image_cur))?;
            for a in &panel {
                if store.has_vote(&rec.pair_id, &a.annotator_id) || store.vote_count(&rec.pair_id) >= store.quorum() {
                    continue;
                }
                let vote = a.vote(&rec.pair_id, &prev, &cur, store.votes().len() as u64);
                store.append_vote(vote)?;
                cast += 1;
            }
        }
        Ok(cast)
    }

    /// Selected pair ids of stage `n` that have no label yet.
    pub fn pending_pairs(&self, n: u32) -> Result<Vec<String>, PipelineError> {
        let dir = self.workdir.stage_dir(n);
        let selected: Vec<PairRecord> = read_jsonl(&self.workdir.selected(n))?;
        let mut store = LabelStore::open(&dir, self.config.annotators)?;
        store.finalize_pending()?;
        Ok(selected
            .iter()
            .filter(|r| store.label_for(&r.pair_id).is_none())
            .map(|r| r.pair_id.clone())
            .collect())
    }

    /// Labeled training pairs of stage `n` alone. Pairs without a label are skipped.
    pub fn stage_labels(&self, n: u32) -> Result<Vec<LabeledPair>, PipelineError> {
        let dir = self.workdir.stage_dir(n);
        let selected: BTreeMap<String, PairRecord> = read_jsonl::<PairRecord>(&self.workdir.selected(n))?
            .into_iter()
            .map(|r| (r.pair_id.clone(), r))
            .collect();
        let store = LabelStore::open(&dir, self.config.annotators)?;
        let mut out = Vec::new();
        for label in store.labels() {
            let Some(rec) = selected.get(&label.pair_id) else {
                return Err(PipelineError::UnknownPair(label.pair_id.clone()));
            };
            let prev = Arc::new(load_image(dir.join(&rec.image_prev))?);
            let cur = Arc::new(load_image(dir.join(&rec.image_cur))?);
            out.push(LabeledPair::new(prev, cur, label.label_prev, label.label_cur)?);
        }
        Ok(out)
    }

    /// All labels of stages 1 through `n`, in stage then label order.
    pub fn accumulated_labels(&self, n: u32) -> Result<Vec<LabeledPair>, PipelineError> {
        let mut all = Vec::new();
        for m in 1..=n {
            all.extend(self.stage_labels(m)?);
        }
        if all.is_empty() {
            return Err(PipelineError::NoLabels { stage: n });
        }
        Ok(all)
    }

    /// Phase 1 followed by stages 1 through N-1.
    pub fn run_all(&self) -> Result<RunSummary, PipelineError> {
        let phase1 = self.run_phase1()?;
        let mut stages = Vec::new();
        for n in 1..self.config.stages {
            stages.push(self.run_stage(n)?);
        }
        Ok(RunSummary { phase1, stages })
    }
}

/// Inputs whose NIQE pairs are withheld from the initial ranker.
fn holdout(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::keyed(seed, "bootstrap-holdout").shuffle(&mut idx);
    let count = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(1));
    let mut held = vec![false; n];
    for &i in &idx[..count] {
        held[i] = true;
    }
    held
}

/// Keys whose values differ, ignoring the vote source.
fn config_diff(stored: &RunConfig, given: &RunConfig) -> Vec<String> {
    let (Ok(serde_json::Value::Object(a)), Ok(serde_json::Value::Object(b))) =
        (serde_json::to_value(stored), serde_json::to_value(given))
    else {
        return vec!["<unserializable>".into()];
    };
    a.iter()
        .filter(|(k, v)| k.as_str() != "vote_source" && b.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_fraction_and_determinism() {
        let h = holdout(64, 0.25, 3);
        assert_eq!(h.iter().filter(|&&b| b).count(), 16);
        assert_eq!(h, holdout(64, 0.25, 3));
        assert_ne!(h, holdout(64, 0.25, 4));
        assert_eq!(holdout(1, 0.5, 0), vec![false]);
    }

    #[test]
    fn config_diff_names_keys() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.top_k = 3;
        b.vote_source = VoteSource::Service;
        assert_eq!(config_diff(&a, &b), vec!["top_k"]);
    }
}
