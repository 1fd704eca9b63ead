//! kvsAll training with the dual binary cross-entropy loss and Adam.
//!
//! Each training row is a distinct `(head, relation)` pair scored against
//! every entity with multi-hot labels. In codlr mode the loss is
//! `L = L_fine + lambda * L_central`; plain models only have the first term.
//! Losses are averaged over the `batch x entities` label matrix.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, ScoreFunction, TrainConfig};
use crate::data::{Split, TripleStore};
use crate::error::{Error, Result};
use crate::lookup;
use crate::metrics;
use crate::model::ModelParams;
use crate::ndmath::sigmoid;
use crate::par;
use crate::scorer::{query_anchor, tail_logits};

const PROB_FLOOR: f64 = 1e-7;

/// Binary cross-entropy of a probability against a (possibly soft) label.
pub fn bce(score: f64, label: f64) -> f64 {
    let s = score.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

/// Derivative of `bce(sigmoid(x), label)` with respect to `x`.
fn bce_logit_grad(score: f64, label: f64) -> f64 {
    if score <= PROB_FLOOR || score >= 1.0 - PROB_FLOOR {
        0.0
    } else {
        score - label
    }
}

pub fn combined_loss(loss_fine: f64, loss_central: f64, lambda: f64) -> f64 {
    loss_fine + lambda * loss_central
}

/// Loss components summed over a batch (already divided by `batch x entities`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub fine: f64,
    pub central: f64,
    pub total: f64,
    /// Sum of lookup sparseness over the batch's queries.
    pub sol_sum: f64,
    pub pairs: usize,
}

/// Dense gradient aligned with [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tensors: [Vec<f64>; 4],
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: [
                vec![0.0; params.entity.len()],
                vec![0.0; params.relation.len()],
                vec![0.0; params.mlp_weight.len()],
                vec![0.0; params.mlp_bias.len()],
            ],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.concat()
    }
}

/// Gradient on every tail row from one score branch:
/// `weights[e] * anchor`, minus `weights[e] * t_e` when `self_term` is set.
struct TailTerm {
    weights: Vec<f64>,
    anchor: Vec<f64>,
    self_term: bool,
}

struct PairGrad {
    head: u32,
    relation: u32,
    fine: f64,
    central: f64,
    sol: f64,
    head_grad: Vec<f64>,
    relation_grad: Vec<f64>,
    mlp_weight: Vec<f64>,
    mlp_bias: Vec<f64>,
    tails: Vec<TailTerm>,
}

struct Branch {
    loss: f64,
    grad_head: Vec<f64>,
    grad_semantics: Vec<f64>,
    tail: TailTerm,
}

/// One score branch (`semantics` = fine-grained, central or plain relation vector).
fn branch(
    params: &ModelParams,
    head: &[f64],
    semantics: &[f64],
    targets: &[u32],
    smoothing: f64,
    scale: f64,
    weight: f64,
) -> Branch {
    let kind = params.scorer;
    let ne = params.num_entities;
    let anchor = query_anchor(kind, head, semantics);
    let logits = tail_logits(params, &anchor);
    let off = smoothing / ne as f64;
    let on = 1.0 - smoothing + off;
    let mut is_target = vec![false; ne];
    for &t in targets {
        is_target[t as usize] = true;
    }

    let mut loss = 0.0;
    let mut coef = vec![0.0f64; ne];
    for e in 0..ne {
        let label = if is_target[e] { on } else { off };
        let s = sigmoid(logits[e]);
        loss += bce(s, label);
        coef[e] = bce_logit_grad(s, label) * scale * weight;
    }
    loss *= scale;

    let d = params.dim;
    let mut grad_anchor = vec![0.0f64; d];
    let tail = match kind {
        ScoreFunction::TransE => {
            // x_e = -||A - t_e||;  dx/dA = -(A - t_e)/dist,  dx/dt_e = (A - t_e)/dist
            let mut coef_sum = 0.0;
            for (e, c) in coef.iter_mut().enumerate() {
                let dist = -logits[e];
                *c = if dist > 1e-12 { *c / dist } else { 0.0 };
                if *c != 0.0 {
                    coef_sum += *c;
                    let t = &params.entity[e * d..(e + 1) * d];
                    for (g, &tk) in grad_anchor.iter_mut().zip(t) {
                        *g += *c * f64::from(tk);
                    }
                }
            }
            for (g, a) in grad_anchor.iter_mut().zip(&anchor) {
                *g -= coef_sum * a;
            }
            TailTerm {
                weights: coef,
                anchor,
                self_term: true,
            }
        }
        ScoreFunction::DistMult => {
            // x_e = A . t_e with A = h * s
            for (e, &c) in coef.iter().enumerate() {
                if c != 0.0 {
                    let t = &params.entity[e * d..(e + 1) * d];
                    for (g, &tk) in grad_anchor.iter_mut().zip(t) {
                        *g += c * f64::from(tk);
                    }
                }
            }
            TailTerm {
                weights: coef,
                anchor,
                self_term: false,
            }
        }
    };
    let (grad_head, grad_semantics) = match kind {
        ScoreFunction::TransE => (grad_anchor.clone(), grad_anchor),
        ScoreFunction::DistMult => (
            grad_anchor.iter().zip(semantics).map(|(g, s)| g * s).collect(),
            grad_anchor.iter().zip(head).map(|(g, h)| g * h).collect(),
        ),
    };
    Branch {
        loss,
        grad_head,
        grad_semantics,
        tail,
    }
}

fn pair_gradient(
    params: &ModelParams,
    config: &TrainConfig,
    store: &TripleStore,
    (head, rel): (u32, u32),
    scale: f64,
) -> PairGrad {
    let targets = store.kvsall_targets(head, rel);
    let q = params.forward_query(head, rel);
    let smoothing = config.label_smoothing;
    let fine = branch(params, &q.head_vec, &q.semantics, targets, smoothing, scale, 1.0);

    match (&q.trace, params.mode) {
        (Some(trace), Mode::Codlr) => {
            let central = branch(
                params,
                &q.head_vec,
                &trace.central,
                targets,
                smoothing,
                scale,
                config.lambda,
            );
            let grads = lookup::backward(
                params.composition,
                trace,
                &params.mlp(rel),
                &params.dictionary(rel),
                &q.head_vec,
                &fine.grad_semantics,
                &central.grad_semantics,
            );
            let head_grad = fine
                .grad_head
                .iter()
                .zip(&central.grad_head)
                .zip(&grads.entity)
                .map(|((a, b), c)| a + b + c)
                .collect();
            PairGrad {
                head,
                relation: rel,
                fine: fine.loss,
                central: central.loss,
                sol: metrics::sol_unchecked(&trace.lookup),
                head_grad,
                relation_grad: grads.dict,
                mlp_weight: grads.weight,
                mlp_bias: grads.bias,
                tails: vec![fine.tail, central.tail],
            }
        }
        _ => PairGrad {
            head,
            relation: rel,
            fine: fine.loss,
            central: 0.0,
            sol: 0.0,
            head_grad: fine.grad_head,
            relation_grad: fine.grad_semantics,
            mlp_weight: Vec::new(),
            mlp_bias: Vec::new(),
            tails: vec![fine.tail],
        },
    }
}

fn summarize(pairs: &[PairGrad], lambda: f64) -> LossParts {
    let mut parts = LossParts {
        pairs: pairs.len(),
        ..LossParts::default()
    };
    for p in pairs {
        parts.fine += p.fine;
        parts.central += p.central;
        parts.sol_sum += p.sol;
    }
    parts.total = combined_loss(parts.fine, parts.central, lambda);
    parts
}

fn effective_lambda(params: &ModelParams, config: &TrainConfig) -> f64 {
    match params.mode {
        Mode::Plain => 0.0,
        Mode::Codlr => config.lambda,
    }
}

/// Loss and analytic gradient of a batch of training pairs.
///
/// Per-pair work runs in parallel; the merge visits pairs in batch order,
/// so the result does not depend on the number of threads.
pub fn batch_gradient(
    params: &ModelParams,
    config: &TrainConfig,
    store: &TripleStore,
    pairs: &[(u32, u32)],
) -> (LossParts, Gradient) {
    let scale = 1.0 / (pairs.len() as f64 * params.num_entities as f64);
    let per_pair = par::map(pairs, |&p| pair_gradient(params, config, store, p, scale));
    let parts = summarize(&per_pair, effective_lambda(params, config));
    let mut grad = Gradient::zeros_like(params);

    let d = params.dim;
    let rows_per_chunk = 64;
    let entity = &params.entity;
    par::for_each_chunk_mut(&mut grad.tensors[0], rows_per_chunk * d, |chunk_idx, chunk| {
        let first = chunk_idx * rows_per_chunk;
        for (r, row) in chunk.chunks_exact_mut(d).enumerate() {
            let e = first + r;
            let t = &entity[e * d..(e + 1) * d];
            for p in &per_pair {
                for term in &p.tails {
                    let w = term.weights[e];
                    if w == 0.0 {
                        continue;
                    }
                    if term.self_term {
                        for ((g, a), &tk) in row.iter_mut().zip(&term.anchor).zip(t) {
                            *g += w * (a - f64::from(tk));
                        }
                    } else {
                        for (g, a) in row.iter_mut().zip(&term.anchor) {
                            *g += w * a;
                        }
                    }
                }
            }
        }
    });

    let rel_len = params.dict_size * d;
    let wlen = params.context_dim() * params.dict_size;
    let n = params.dict_size;
    for p in &per_pair {
        let h = p.head as usize;
        add_into(&mut grad.tensors[0][h * d..(h + 1) * d], &p.head_grad);
        let r = p.relation as usize;
        add_into(&mut grad.tensors[1][r * rel_len..(r + 1) * rel_len], &p.relation_grad);
        if !p.mlp_weight.is_empty() {
            let m = params.mlp_index(p.relation);
            add_into(&mut grad.tensors[2][m * wlen..(m + 1) * wlen], &p.mlp_weight);
            add_into(&mut grad.tensors[3][m * n..(m + 1) * n], &p.mlp_bias);
        }
    }
    (parts, grad)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Batch loss without gradients.
pub fn batch_loss(
    params: &ModelParams,
    config: &TrainConfig,
    store: &TripleStore,
    pairs: &[(u32, u32)],
) -> LossParts {
    batch_gradient(params, config, store, pairs).0
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub first: [Vec<f32>; 4],
    pub second: [Vec<f32>; 4],
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams) -> Self {
        let zeros = |t: &[f32]| vec![0.0f32; t.len()];
        Self {
            step: 0,
            first: [
                zeros(&params.entity),
                zeros(&params.relation),
                zeros(&params.mlp_weight),
                zeros(&params.mlp_bias),
            ],
            second: [
                zeros(&params.entity),
                zeros(&params.relation),
                zeros(&params.mlp_weight),
                zeros(&params.mlp_bias),
            ],
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grad: &Gradient, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powf(self.step as f64);
        let bc2 = 1.0 - Self::BETA2.powf(self.step as f64);
        for (k, theta) in params.tensors_mut().into_iter().enumerate() {
            let g = &grad.tensors[k];
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..theta.len() {
                let gi = g[i];
                let mi = Self::BETA1 * f64::from(m[i]) + (1.0 - Self::BETA1) * gi;
                let vi = Self::BETA2 * f64::from(v[i]) + (1.0 - Self::BETA2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + Self::EPS);
                theta[i] = (f64::from(theta[i]) - update) as f32;
            }
        }
    }
}

/// Means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub loss_fine: f64,
    pub loss_central: f64,
    /// Mean lookup sparseness over the epoch's training queries (codlr only).
    pub sol_mean: Option<f64>,
    pub valid_mrr: Option<f64>,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,loss,loss_f,loss_c,sol_mean,valid_mrr";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            self.loss_fine,
            self.loss_central,
            opt(self.sol_mean),
            opt(self.valid_mrr)
        )
    }
}

/// Model, optimizer state and epoch counter of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optim: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, store: &TripleStore) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, store.num_entities(), store.num_relations());
        let optim = Adam::new(&params);
        Ok(Self {
            config,
            params,
            optim,
            epoch: 0,
        })
    }

    pub fn train_epoch(&mut self, store: &TripleStore) -> Result<EpochStats> {
        let epoch = self.epoch + 1;
        let mut order = store.train_pairs().to_vec();
        if order.is_empty() {
            return Err(Error::Invalid("no training triples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut sums = LossParts::default();
        let mut weighted = [0.0f64; 3];
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let (parts, grad) = batch_gradient(&self.params, &self.config, store, batch);
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, batch {b}, first pair {:?}",
                    batch[0]
                )));
            }
            if let Some(i) = grad.tensors.iter().flatten().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient entry {i} at epoch {epoch}, batch {b}, first pair {:?}",
                    batch[0]
                )));
            }
            let w = batch.len() as f64;
            weighted[0] += parts.total * w;
            weighted[1] += parts.fine * w;
            weighted[2] += parts.central * w;
            sums.sol_sum += parts.sol_sum;
            sums.pairs += parts.pairs;
            self.optim.apply(&mut self.params, &grad, self.config.learning_rate);
        }
        self.epoch = epoch;
        let n = sums.pairs as f64;
        let due = self.config.eval_every > 0 && epoch.is_multiple_of(self.config.eval_every);
        let valid_mrr = if due && !store.triples(Split::Valid).is_empty() {
            Some(metrics::evaluate(&self.params, store, Split::Valid, self.config.seed)?.mrr)
        } else {
            None
        };
        Ok(EpochStats {
            epoch,
            loss: weighted[0] / n,
            loss_fine: weighted[1] / n,
            loss_central: weighted[2] / n,
            sol_mean: (self.params.mode == Mode::Codlr).then(|| sums.sol_sum / n),
            valid_mrr,
        })
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn fit<F>(&mut self, store: &TripleStore, mut on_epoch: F) -> Result<Vec<EpochStats>>
    where
        F: FnMut(&Trainer, &EpochStats) -> Result<()>,
    {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch(store)?;
            on_epoch(self, &stats)?;
            history.push(stats);
        }
        Ok(history)
    }
}
