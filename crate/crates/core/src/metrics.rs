//! Filtered ranking metrics and lookup diagnostics (SOL, DIV, DAE).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Mode;
use crate::data::{Split, TripleStore};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ndmath;
use crate::par;
use crate::scorer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    pub query: usize,
    pub rank: usize,
    pub reciprocal: f64,
}

impl RankResult {
    pub fn new(query: usize, rank: usize) -> Self {
        Self {
            query,
            rank,
            reciprocal: 1.0 / rank as f64,
        }
    }
}

/// 1-based rank of `gold` after removing `excluded`, with ties broken by
/// uniform placement: `1 + #better + u`, `u ~ U{0..=#ties}`.
pub fn rank_gold<R: Rng + ?Sized>(
    scores: &[f64],
    gold: u32,
    excluded: &[u32],
    rng: &mut R,
) -> Result<usize> {
    let gold_idx = gold as usize;
    if gold_idx >= scores.len() {
        return Err(Error::Invalid(format!("gold {gold} outside {} candidates", scores.len())));
    }
    let mut skip = vec![false; scores.len()];
    for &e in excluded {
        if e == gold {
            return Err(Error::Invalid(format!("gold {gold} is in the filter set")));
        }
        skip[e as usize] = true;
    }
    let target = scores[gold_idx];
    let mut better = 0usize;
    let mut ties = 0usize;
    for (e, &s) in scores.iter().enumerate() {
        if skip[e] || e == gold_idx {
            continue;
        }
        if s > target {
            better += 1;
        } else if s == target {
            ties += 1;
        }
    }
    let offset = if ties > 0 { rng.gen_range(0..=ties) } else { 0 };
    Ok(1 + better + offset)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl RankMetrics {
    pub fn hits(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits1),
            3 => Some(self.hits3),
            10 => Some(self.hits10),
            _ => None,
        }
    }

    /// `metric,value` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in [
            ("count", self.count as f64),
            ("mr", self.mr),
            ("mrr", self.mrr),
            ("hits@1", self.hits1),
            ("hits@3", self.hits3),
            ("hits@10", self.hits10),
        ] {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

pub fn aggregate(ranks: &[usize]) -> Result<RankMetrics> {
    if ranks.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty rank list".into()));
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(RankMetrics {
        count: ranks.len(),
        mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: frac(1),
        hits3: frac(3),
        hits10: frac(10),
    })
}

/// Per-query RNG: stream `query` of a ChaCha8 generator seeded with `seed`,
/// so results do not depend on evaluation order.
pub fn query_rng(seed: u64, query: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query as u64);
    rng
}

/// Filtered tail ranks for every triple of `split` (reciprocals included,
/// so head prediction is covered).
pub fn rank_split(
    params: &ModelParams,
    store: &TripleStore,
    split: Split,
    seed: u64,
) -> Result<Vec<RankResult>> {
    let triples = store.triples(split);
    let indexed: Vec<(usize, (u32, u32, u32))> = triples.iter().copied().enumerate().collect();
    par::map(&indexed, |&(q, (h, r, t))| {
        let batch = scorer::predict(params, h, r);
        let excluded = store.filter_candidates(h, r, t);
        let mut rng = query_rng(seed, q);
        rank_gold(&batch.logits, t, &excluded, &mut rng).map(|rank| RankResult::new(q, rank))
    })
    .into_iter()
    .collect()
}

pub fn evaluate(
    params: &ModelParams,
    store: &TripleStore,
    split: Split,
    seed: u64,
) -> Result<RankMetrics> {
    let ranks: Vec<usize> = rank_split(params, store, split, seed)?
        .into_iter()
        .map(|r| r.rank)
        .collect();
    aggregate(&ranks)
}

pub(crate) fn sol_unchecked(lookup: &[f64]) -> f64 {
    let n = lookup.len() as f64;
    let j: f64 = lookup.iter().map(|p| p * p).sum();
    ((j - 1.0 / n) / (1.0 - 1.0 / n)).clamp(0.0, 1.0)
}

/// Sparseness of a lookup distribution: 0 when uniform, 1 when one-hot.
pub fn sol(lookup: &[f64]) -> Result<f64> {
    if lookup.len() < 2 {
        return Err(Error::Invalid("SOL needs at least two entries".into()));
    }
    let sum: f64 = lookup.iter().sum();
    if lookup.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid("SOL input is not a probability vector".into()));
    }
    Ok(sol_unchecked(lookup))
}

/// Internal diversity of a vector set: `(1 - mean cos(v, mean(V))) / 2`.
///
/// A cosine whose denominator falls below `1e-12` counts as 0.
pub fn div(vectors: &[Vec<f64>]) -> Result<f64> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Invalid("DIV of an empty set".into()))?;
    let d = first.len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("DIV vectors differ in length".into()));
    }
    let mut center = vec![0.0f64; d];
    for v in vectors {
        for (c, x) in center.iter_mut().zip(v) {
            *c += x;
        }
    }
    center.iter_mut().for_each(|c| *c /= vectors.len() as f64);
    let center_norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut cos_sum = 0.0;
    for v in vectors {
        let denom = v.iter().map(|x| x * x).sum::<f64>().sqrt() * center_norm;
        if denom >= 1e-12 {
            cos_sum += v.iter().zip(&center).map(|(a, b)| a * b).sum::<f64>() / denom;
        }
    }
    // rounding can push a cosine a hair past 1
    Ok(((1.0 - cos_sum / vectors.len() as f64) / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeRow {
    pub relation: u32,
    pub div_entities: f64,
    pub div_dict: f64,
    pub dae: f64,
}

fn require_codlr(params: &ModelParams) -> Result<()> {
    if params.mode != Mode::Codlr {
        return Err(Error::Invalid("diagnostics require codlr mode".into()));
    }
    Ok(())
}

/// Gap between the diversity of a relation's training heads and of its
/// dictionary. `None` when the relation has no training triple.
pub fn dae(params: &ModelParams, store: &TripleStore, rel: u32) -> Result<Option<DaeRow>> {
    require_codlr(params)?;
    let heads = store.train_heads(rel);
    if heads.is_empty() {
        return Ok(None);
    }
    let entities: Vec<Vec<f64>> = heads.iter().map(|&h| ndmath::to_f64(params.entity(h))).collect();
    let dict = params.dictionary(rel);
    let rows: Vec<Vec<f64>> = (0..dict.size()).map(|i| ndmath::to_f64(dict.row(i))).collect();
    let div_entities = div(&entities)?;
    let div_dict = div(&rows)?;
    Ok(Some(DaeRow {
        relation: rel,
        div_entities,
        div_dict,
        dae: (div_entities - div_dict).abs(),
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Mean SOL over the distinct `(head, relation)` queries of the chosen split.
    pub sol_mean: f64,
    pub dae: Vec<DaeRow>,
    pub dae_mean: f64,
}

/// Mean SOL over the queries of `split` and DAE for every relation used in training.
pub fn diagnose(params: &ModelParams, store: &TripleStore, split: Split) -> Result<Diagnostics> {
    require_codlr(params)?;
    let pairs: Vec<(u32, u32)> = match split {
        Split::Train => store.train_pairs().to_vec(),
        other => {
            let mut v: Vec<(u32, u32)> = store.triples(other).iter().map(|t| (t.0, t.1)).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("no {} queries to diagnose", split.name())));
    }
    let sols = par::map(&pairs, |&(h, r)| {
        params.lookup(h, r).map(|t| sol_unchecked(&t.lookup))
    });
    let sols: Vec<f64> = sols.into_iter().collect::<Result<_>>()?;
    let rows = par::map_range(store.num_relations(), |r| dae(params, store, r as u32));
    let rows: Vec<DaeRow> = rows
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let dae_mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.dae).sum::<f64>() / rows.len() as f64
    };
    Ok(Diagnostics {
        sol_mean: sols.iter().sum::<f64>() / sols.len() as f64,
        dae: rows,
        dae_mean,
    })
}

pub fn dae_csv(rows: &[DaeRow], store: &TripleStore) -> String {
    let mut s = String::from("relation,div_entities,div_dict,dae\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            store.vocab().relation_name(r.relation),
            r.div_entities,
            r.div_dict,
            r.dae
        );
    }
    s
}

pub fn sol_curve_csv(points: &[(usize, f64)]) -> String {
    let mut s = String::from("epoch,sol_mean\n");
    for (epoch, v) in points {
        let _ = writeln!(s, "{epoch},{v}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let mut rng = query_rng(0, 0);
        assert_eq!(rank_gold(&[0.9, 0.5, 0.1], 1, &[], &mut rng).unwrap(), 2);
        assert_eq!(rank_gold(&[0.9, 0.5, 0.1], 1, &[0], &mut rng).unwrap(), 1);
        assert!(rank_gold(&[0.9, 0.5], 1, &[1], &mut rng).is_err());
    }

    #[test]
    fn all_ties_average_to_middle() {
        let scores = vec![0.3; 100];
        let mut rng = query_rng(99, 0);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| rank_gold(&scores, 17, &[], &mut rng).unwrap())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 50.5).abs() < 2.0, "mean rank {mean}");
    }

    #[test]
    fn aggregate_examples() {
        let m = aggregate(&[1, 4]).unwrap();
        assert_eq!((m.mr, m.mrr, m.hits1, m.hits3, m.hits10), (2.5, 0.625, 0.5, 0.5, 1.0));
        let m = aggregate(&[1, 1, 1]).unwrap();
        assert_eq!((m.mr, m.mrr, m.hits1, m.hits10), (1.0, 1.0, 1.0, 1.0));
        assert!(aggregate(&[]).is_err());
        assert!(m.to_csv().starts_with("metric,value\n"));
    }

    #[test]
    fn sol_examples() {
        assert!(sol(&[0.25; 4]).unwrap().abs() < 1e-12);
        assert_eq!(sol(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!((sol(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(sol(&[0.5, 0.6]).is_err());
        assert!(sol(&[1.0]).is_err());
    }

    #[test]
    fn div_examples() {
        let same = vec![vec![1.0, 2.0]; 3];
        assert!(div(&same).unwrap().abs() < 1e-12);
        let axes = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((div(&axes).unwrap() - (1.0 - 2f64.sqrt() / 2.0) / 2.0).abs() < 1e-12);
        let opposed = vec![vec![1.0, -2.0], vec![-1.0, 2.0]];
        assert_eq!(div(&opposed).unwrap(), 0.5);
        assert!(div(&[]).is_err());
    }
}
