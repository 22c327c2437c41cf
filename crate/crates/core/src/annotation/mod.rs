//! Pairwise votes, majority aggregation, the on-disk label store and a
//! simulated annotator for unattended runs.

mod oracle;
mod store;

pub use oracle::{utility, SimulatedAnnotator};
pub use store::{LabelStore, LABELS_FILE, VOTES_FILE};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Which image of a pair the annotator judged better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Prev,
    Cur,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub pair_id: String,
    pub annotator_id: String,
    pub choice: Choice,
    /// Milliseconds; simulated runs use a logical clock.
    pub timestamp: u64,
}

/// Aggregated ranking label of one pair; 0 marks the better image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankLabel {
    pub pair_id: String,
    pub label_prev: u8,
    pub label_cur: u8,
    pub vote_count: usize,
}

impl RankLabel {
    pub fn winner(&self) -> Choice {
        if self.label_cur == 0 {
            Choice::Cur
        } else {
            Choice::Prev
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("pair {pair_id} has {count} votes, at least 3 are needed")]
    TooFewVotes { pair_id: String, count: usize },
    #[error("pair {pair_id} has an even number of votes ({count})")]
    EvenVotes { pair_id: String, count: usize },
    #[error("annotator {annotator_id} voted twice on pair {pair_id}")]
    DuplicateVote { pair_id: String, annotator_id: String },
    #[error("votes belong to different pairs")]
    MixedPairs,
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("required vote count must be odd and at least 3, got {0}")]
    BadQuorum(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Majority vote over the votes of one pair.
pub fn aggregate_votes(votes: &[VoteRecord]) -> Result<RankLabel, AnnotationError> {
    let Some(first) = votes.first() else {
        return Err(AnnotationError::TooFewVotes {
            pair_id: String::new(),
            count: 0,
        });
    };
    let pair_id = first.pair_id.clone();
    if votes.iter().any(|v| v.pair_id != pair_id) {
        return Err(AnnotationError::MixedPairs);
    }
    let mut seen = BTreeSet::new();
    for v in votes {
        if !seen.insert(v.annotator_id.as_str()) {
            return Err(AnnotationError::DuplicateVote {
                pair_id,
                annotator_id: v.annotator_id.clone(),
            });
        }
    }
    let count = votes.len();
    if count < 3 {
        return Err(AnnotationError::TooFewVotes { pair_id, count });
    }
    if count % 2 == 0 {
        return Err(AnnotationError::EvenVotes { pair_id, count });
    }
    let cur = votes.iter().filter(|v| v.choice == Choice::Cur).count();
    let cur_wins = 2 * cur > count;
    Ok(RankLabel {
        pair_id,
        label_prev: u8::from(cur_wins),
        label_cur: u8::from(!cur_wins),
        vote_count: count,
    })
}
