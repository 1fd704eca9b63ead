//! TransE and DistMult plausibility scores, single-triple and 1-vs-all.
//!
//! Scores are probabilities: `sigmoid(-||h + r - t||)` for TransE and
//! `sigmoid((h * r) . t)` for DistMult. Batches keep the pre-sigmoid logits
//! so ranking never suffers from sigmoid saturation.

use crate::config::{Mode, ScoreFunction};
use crate::error::{Error, Result};
use crate::lookup::LookupTrace;
use crate::model::ModelParams;
use crate::ndmath::{self, sigmoid};
use crate::par;

/// Entity count above which 1-vs-all scoring splits entities into parallel blocks.
const PAR_BLOCK: usize = 2048;

pub fn transe_logit(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    assert!(h.len() == r.len() && r.len() == t.len(), "score needs equal dimensions");
    -h.iter()
        .zip(r)
        .zip(t)
        .map(|((a, b), c)| (a + b - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn distmult_logit(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    assert!(h.len() == r.len() && r.len() == t.len(), "score needs equal dimensions");
    h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum()
}

pub fn score_transe(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    sigmoid(transe_logit(h, r, t))
}

pub fn score_distmult(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    sigmoid(distmult_logit(h, r, t))
}

pub fn logit(kind: ScoreFunction, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match kind {
        ScoreFunction::TransE => transe_logit(h, r, t),
        ScoreFunction::DistMult => distmult_logit(h, r, t),
    }
}

/// Scores of one query against every entity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub head: u32,
    pub relation: u32,
    pub logits: Vec<f64>,
}

impl ScoreBatch {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn score(&self, entity: u32) -> f64 {
        sigmoid(self.logits[entity as usize])
    }

    pub fn scores(&self) -> Vec<f64> {
        self.logits.iter().map(|&x| sigmoid(x)).collect()
    }
}

/// The vector every tail is compared with: `h + s` (TransE) or `h * s` (DistMult).
pub fn query_anchor(kind: ScoreFunction, head: &[f64], semantics: &[f64]) -> Vec<f64> {
    match kind {
        ScoreFunction::TransE => head.iter().zip(semantics).map(|(a, b)| a + b).collect(),
        ScoreFunction::DistMult => head.iter().zip(semantics).map(|(a, b)| a * b).collect(),
    }
}

#[inline]
pub(crate) fn anchor_logit(kind: ScoreFunction, anchor: &[f64], tail: &[f32]) -> f64 {
    match kind {
        ScoreFunction::TransE => -anchor
            .iter()
            .zip(tail)
            .map(|(a, &t)| (a - f64::from(t)).powi(2))
            .sum::<f64>()
            .sqrt(),
        ScoreFunction::DistMult => ndmath::dot64(anchor, tail),
    }
}

/// Logits of `anchor` against every entity, on the calling thread.
pub(crate) fn tail_logits(params: &ModelParams, anchor: &[f64]) -> Vec<f64> {
    params
        .entity
        .chunks_exact(params.dim)
        .map(|t| anchor_logit(params.scorer, anchor, t))
        .collect()
}

/// Scores `(head, ?)` under `semantics` against all entities.
pub fn score_all_tails(params: &ModelParams, head: u32, rel: u32, semantics: &[f64]) -> ScoreBatch {
    assert_eq!(semantics.len(), params.dim, "semantics dimension");
    let head_vec = ndmath::to_f64(params.entity(head));
    let anchor = query_anchor(params.scorer, &head_vec, semantics);
    let logits = if params.num_entities >= PAR_BLOCK {
        let mut out = vec![0.0; params.num_entities];
        let d = params.dim;
        par::for_each_chunk_mut(&mut out, PAR_BLOCK, |block, chunk| {
            let base = block * PAR_BLOCK;
            for (i, o) in chunk.iter_mut().enumerate() {
                let e = base + i;
                *o = anchor_logit(params.scorer, &anchor, &params.entity[e * d..(e + 1) * d]);
            }
        });
        out
    } else {
        tail_logits(params, &anchor)
    };
    ScoreBatch {
        head,
        relation: rel,
        logits,
    }
}

/// Central and fine-grained scores of one query, from a single lookup.
#[derive(Debug, Clone)]
pub struct DualScores {
    pub central: ScoreBatch,
    pub fine: ScoreBatch,
    pub trace: LookupTrace,
}

pub fn dual_scores(params: &ModelParams, head: u32, rel: u32) -> Result<DualScores> {
    if params.mode != Mode::Codlr {
        return Err(Error::Invalid(
            "central scores are undefined for plain models".into(),
        ));
    }
    let trace = params.lookup(head, rel)?;
    Ok(DualScores {
        central: score_all_tails(params, head, rel, &trace.central),
        fine: score_all_tails(params, head, rel, &trace.fine_grained),
        trace,
    })
}

/// Prediction scores: fine-grained in codlr mode, the relation vector in plain mode.
pub fn predict(params: &ModelParams, head: u32, rel: u32) -> ScoreBatch {
    let q = params.forward_query(head, rel);
    score_all_tails(params, head, rel, &q.semantics)
}
