use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{aggregate_votes, AnnotationError, RankLabel, VoteRecord};

pub const VOTES_FILE: &str = "votes.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

/// Append-only vote and label files of one stage.
///
/// A pair's label is written as soon as its vote count reaches the quorum.
/// Every append is flushed and fsynced before it is acknowledged.
#[derive(Debug)]
pub struct LabelStore {
    votes_path: PathBuf,
    labels_path: PathBuf,
    quorum: usize,
    votes: Vec<VoteRecord>,
    labels: Vec<RankLabel>,
    keys: BTreeSet<(String, String)>,
    by_pair: BTreeMap<String, Vec<usize>>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AnnotationError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AnnotationError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn append_line<T: Serialize>(path: &Path, record: &T) -> Result<(), AnnotationError> {
    let mut line = serde_json::to_string(record).expect("records serialize");
    line.push('\n');
    let mut f: File = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.sync_all()?;
    Ok(())
}

impl LabelStore {
    /// Opens (or starts) the store in `dir`, replaying any existing files.
    pub fn open(dir: impl AsRef<Path>, quorum: usize) -> Result<Self, AnnotationError> {
        if quorum < 3 || quorum % 2 == 0 {
            return Err(AnnotationError::BadQuorum(quorum));
        }
        let dir = dir.as_ref();
        let votes_path = dir.join(VOTES_FILE);
        let labels_path = dir.join(LABELS_FILE);
        let votes: Vec<VoteRecord> = read_jsonl(&votes_path)?;
        let labels = read_jsonl(&labels_path)?;
        let mut store = Self {
            votes_path,
            labels_path,
            quorum,
            votes: Vec::new(),
            labels,
            keys: BTreeSet::new(),
            by_pair: BTreeMap::new(),
        };
        for v in votes {
            store.index(v)?;
        }
        Ok(store)
    }

    fn index(&mut self, vote: VoteRecord) -> Result<(), AnnotationError> {
        if !self.keys.insert((vote.pair_id.clone(), vote.annotator_id.clone())) {
            return Err(AnnotationError::DuplicateVote {
                pair_id: vote.pair_id,
                annotator_id: vote.annotator_id,
            });
        }
        self.by_pair.entry(vote.pair_id.clone()).or_default().push(self.votes.len());
        self.votes.push(vote);
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn votes(&self) -> &[VoteRecord] {
        &self.votes
    }

    pub fn labels(&self) -> &[RankLabel] {
        &self.labels
    }

    pub fn has_vote(&self, pair_id: &str, annotator_id: &str) -> bool {
        self.keys.contains(&(pair_id.to_string(), annotator_id.to_string()))
    }

    pub fn vote_count(&self, pair_id: &str) -> usize {
        self.by_pair.get(pair_id).map_or(0, Vec::len)
    }

    pub fn label_for(&self, pair_id: &str) -> Option<&RankLabel> {
        self.labels.iter().find(|l| l.pair_id == pair_id)
    }

    /// Records a vote; returns the label if this vote completed the pair.
    /// Votes beyond the quorum are rejected as duplicates of a closed pair.
    pub fn append_vote(&mut self, vote: VoteRecord) -> Result<Option<RankLabel>, AnnotationError> {
        if self.has_vote(&vote.pair_id, &vote.annotator_id) || self.vote_count(&vote.pair_id) >= self.quorum {
            return Err(AnnotationError::DuplicateVote {
                pair_id: vote.pair_id,
                annotator_id: vote.annotator_id,
            });
        }
        append_line(&self.votes_path, &vote)?;
        let pair_id = vote.pair_id.clone();
        self.index(vote)?;
        if self.vote_count(&pair_id) < self.quorum || self.label_for(&pair_id).is_some() {
            return Ok(None);
        }
        let pair_votes: Vec<VoteRecord> = self.by_pair[&pair_id].iter().map(|&i| self.votes[i].clone()).collect();
        let label = aggregate_votes(&pair_votes)?;
        append_line(&self.labels_path, &label)?;
        self.labels.push(label.clone());
        Ok(Some(label))
    }

    /// Writes labels for pairs that reached the quorum but have none yet,
    /// as happens after a crash between the last vote and its label.
    pub fn finalize_pending(&mut self) -> Result<Vec<RankLabel>, AnnotationError> {
        let ready: Vec<String> = self
            .by_pair
            .iter()
            .filter(|(p, idx)| idx.len() >= self.quorum && self.label_for(p).is_none())
            .map(|(p, _)| p.clone())
            .collect();
        let mut out = Vec::new();
        for pair_id in ready {
            let pair_votes: Vec<VoteRecord> = self.by_pair[&pair_id].iter().map(|&i| self.votes[i].clone()).collect();
            let label = aggregate_votes(&pair_votes)?;
            append_line(&self.labels_path, &label)?;
            self.labels.push(label.clone());
            out.push(label);
        }
        Ok(out)
    }
}
