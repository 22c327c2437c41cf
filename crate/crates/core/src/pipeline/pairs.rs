use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::InputSet;
use super::layout::OUTPUTS_DIR;
use super::PipelineError;
use crate::checkpoint::{ModelKind, ParamCheckpoint};
use crate::enhancer::CurveEnhancer;
use crate::image::save_image;
use crate::ranker::Ranker;

/// Outputs of two adjacent enhancers for one input, scored by the previous ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub stage: u32,
    pub input_id: String,
    /// Relative to the stage directory.
    pub image_prev: String,
    pub image_cur: String,
    pub score_prev: f64,
    pub score_cur: f64,
    pub score_gap: f64,
}

pub fn pair_id(stage: u32, input_id: &str) -> String {
    format!("s{stage}-{input_id}")
}

/// Renders every input through `f_prev` (stage n-1) and `f_cur` (stage n),
/// writes the 8-bit outputs under `stage_dir/outputs` and scores them with
/// the stage n-1 ranker.
pub fn generate_pairs(
    f_prev: &ParamCheckpoint,
    f_cur: &ParamCheckpoint,
    ranker: &ParamCheckpoint,
    inputs: &InputSet,
    stage: u32,
    stage_dir: &Path,
) -> Result<Vec<PairRecord>, PipelineError> {
    let expect = |ck: &ParamCheckpoint, kind: ModelKind, want: u32, what: &str| -> Result<(), PipelineError> {
        ck.expect_kind(kind)?;
        if ck.stage != want {
            return Err(PipelineError::StageMismatch {
                what: what.to_string(),
                expected: want,
                found: ck.stage,
            });
        }
        Ok(())
    };
    if stage == 0 {
        return Err(PipelineError::StageMismatch {
            what: "pair stage".into(),
            expected: 1,
            found: 0,
        });
    }
    expect(f_prev, ModelKind::Enhancer, stage - 1, "previous enhancer")?;
    expect(f_cur, ModelKind::Enhancer, stage, "current enhancer")?;
    expect(ranker, ModelKind::Ranker, stage - 1, "ranker")?;
    if inputs.is_empty() {
        return Err(PipelineError::EmptyInputs("training set".into()));
    }
    let (e_prev, e_cur) = (CurveEnhancer::from_checkpoint(f_prev)?, CurveEnhancer::from_checkpoint(f_cur)?);
    let g = Ranker::from_checkpoint(ranker)?;
    let out_dir = stage_dir.join(OUTPUTS_DIR);
    std::fs::create_dir_all(&out_dir)?;

    let rendered = inputs
        .images
        .par_iter()
        .map(|x| Ok((e_prev.enhance(x)?.quantized(), e_cur.enhance(x)?.quantized())))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut records = Vec::with_capacity(inputs.len());
    for (id, (prev, cur)) in inputs.ids.iter().zip(&rendered) {
        let image_prev = format!("{OUTPUTS_DIR}/{id}-prev.png");
        let image_cur = format!("{OUTPUTS_DIR}/{id}-cur.png");
        save_image(prev, stage_dir.join(&image_prev))?;
        save_image(cur, stage_dir.join(&image_cur))?;
        let s = g.score_batch(&[prev, cur])?;
        records.push(PairRecord {
            pair_id: pair_id(stage, id),
            stage,
            input_id: id.clone(),
            image_prev,
            image_cur,
            score_prev: s[0],
            score_cur: s[1],
            score_gap: (s[0] - s[1]).abs(),
        });
    }
    Ok(records)
}

/// The `k` records with the largest score gap, ties broken by ascending
/// `pair_id`, in descending gap order.
pub fn select_pairs(pairs: &[PairRecord], k: usize) -> Result<Vec<PairRecord>, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::NoPairs);
    }
    if k == 0 {
        return Err(PipelineError::ZeroK);
    }
    let mut sorted: Vec<&PairRecord> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score_gap.total_cmp(&a.score_gap).then_with(|| a.pair_id.cmp(&b.pair_id)));
    Ok(sorted.into_iter().take(k).cloned().collect())
}
