//! Contextual dictionary lookup.
//!
//! A relation owns a dictionary of `n` semantic vectors. The query entity is
//! composed with the dictionary mean (the central semantics) into a context
//! vector, a one-layer MLP with softmax turns the context into a lookup
//! distribution over dictionary rows, and the lookup-weighted sum of rows is
//! the fine-grained semantics used for scoring.

use crate::error::{Error, Result};
use crate::ndmath::{self, Activation};

/// How the entity and the central semantics form the context vector.
///
/// `CentralOnly` and `EntityOnly` bypass composition and are the two
/// context ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompositionKind {
    #[default]
    Sum,
    Concat,
    Mult,
    Corr,
    CentralOnly,
    EntityOnly,
}

impl CompositionKind {
    pub const ALL: [CompositionKind; 6] = [
        CompositionKind::Sum,
        CompositionKind::Concat,
        CompositionKind::Mult,
        CompositionKind::Corr,
        CompositionKind::CentralOnly,
        CompositionKind::EntityOnly,
    ];

    pub fn context_dim(self, dim: usize) -> usize {
        match self {
            CompositionKind::Concat => 2 * dim,
            _ => dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CompositionKind::Sum => "sum",
            CompositionKind::Concat => "concat",
            CompositionKind::Mult => "mult",
            CompositionKind::Corr => "corr",
            CompositionKind::CentralOnly => "central_only",
            CompositionKind::EntityOnly => "entity_only",
        }
    }
}

impl std::str::FromStr for CompositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CompositionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown composition '{s}'")))
    }
}

/// Borrowed view of one relation's `n x d` dictionary.
#[derive(Debug, Clone, Copy)]
pub struct RelationDictionary<'a> {
    rows: &'a [f32],
    size: usize,
    dim: usize,
}

impl<'a> RelationDictionary<'a> {
    pub fn new(rows: &'a [f32], size: usize, dim: usize) -> Self {
        assert!(size >= 1, "dictionary needs at least one row");
        assert_eq!(rows.len(), size * dim, "dictionary shape mismatch");
        Self { rows, size, dim }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Borrowed view of the lookup MLP: `weight` is `context_dim x n`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct LookupMlp<'a> {
    weight: &'a [f32],
    bias: &'a [f32],
    context_dim: usize,
    activation: Activation,
}

impl<'a> LookupMlp<'a> {
    pub fn new(weight: &'a [f32], bias: &'a [f32], context_dim: usize, activation: Activation) -> Self {
        assert_eq!(weight.len(), context_dim * bias.len(), "lookup weight shape mismatch");
        Self {
            weight,
            bias,
            context_dim,
            activation,
        }
    }

    pub fn size(&self) -> usize {
        self.bias.len()
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Intermediate values of one lookup, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTrace {
    pub context: Vec<f64>,
    /// MLP output fed to the softmax.
    pub activated: Vec<f64>,
    pub lookup: Vec<f64>,
    pub fine_grained: Vec<f64>,
    pub central: Vec<f64>,
}

impl LookupTrace {
    /// Index of the dictionary row with the largest lookup weight.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.lookup.iter().enumerate() {
            if p > self.lookup[best] {
                best = i;
            }
        }
        best
    }
}

pub fn central_semantics(dict: &RelationDictionary<'_>) -> Vec<f64> {
    let mut mean = vec![0.0f64; dict.dim];
    for i in 0..dict.size {
        for (m, &x) in mean.iter_mut().zip(dict.row(i)) {
            *m += f64::from(x);
        }
    }
    let n = dict.size as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

pub fn compose(kind: CompositionKind, entity: &[f64], center: &[f64]) -> Vec<f64> {
    assert_eq!(entity.len(), center.len(), "composition needs equal dimensions");
    match kind {
        CompositionKind::Sum => entity.iter().zip(center).map(|(a, b)| a + b).collect(),
        CompositionKind::Concat => entity.iter().chain(center).copied().collect(),
        CompositionKind::Mult => entity.iter().zip(center).map(|(a, b)| a * b).collect(),
        CompositionKind::Corr => ndmath::circular_correlation(entity, center),
        CompositionKind::CentralOnly => center.to_vec(),
        CompositionKind::EntityOnly => entity.to_vec(),
    }
}

/// Gradients of a context-vector gradient with respect to entity and center.
fn compose_backward(
    kind: CompositionKind,
    entity: &[f64],
    center: &[f64],
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = entity.len();
    match kind {
        CompositionKind::Sum => (grad.to_vec(), grad.to_vec()),
        CompositionKind::Concat => (grad[..d].to_vec(), grad[d..].to_vec()),
        CompositionKind::Mult => (
            grad.iter().zip(center).map(|(g, c)| g * c).collect(),
            grad.iter().zip(entity).map(|(g, e)| g * e).collect(),
        ),
        CompositionKind::Corr => ndmath::circular_correlation_backward(entity, center, grad),
        CompositionKind::CentralOnly => (vec![0.0; d], grad.to_vec()),
        CompositionKind::EntityOnly => (grad.to_vec(), vec![0.0; d]),
    }
}

/// Returns `(G, L)` with `G = act(W^T C + b)` and `L = softmax(G)`.
pub fn lookup(mlp: &LookupMlp<'_>, context: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(context.len(), mlp.context_dim, "context length mismatch");
    let n = mlp.size();
    let mut pre: Vec<f64> = mlp.bias.iter().map(|&b| f64::from(b)).collect();
    for (i, &c) in context.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let row = &mlp.weight[i * n..(i + 1) * n];
        for (p, &w) in pre.iter_mut().zip(row) {
            *p += c * f64::from(w);
        }
    }
    let activated: Vec<f64> = pre.into_iter().map(|z| mlp.activation.apply(z)).collect();
    let probs = ndmath::softmax(&activated);
    (activated, probs)
}

/// Lookup-weighted sum of dictionary rows.
pub fn fine_grained(lookup: &[f64], dict: &RelationDictionary<'_>) -> Vec<f64> {
    assert_eq!(lookup.len(), dict.size, "lookup length must equal dictionary size");
    let mut out = vec![0.0f64; dict.dim];
    for (i, &p) in lookup.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(dict.row(i)) {
            *o += p * f64::from(x);
        }
    }
    out
}

pub fn forward(
    kind: CompositionKind,
    mlp: &LookupMlp<'_>,
    dict: &RelationDictionary<'_>,
    entity: &[f64],
) -> LookupTrace {
    let central = central_semantics(dict);
    let context = compose(kind, entity, &central);
    let (activated, lookup_probs) = lookup(mlp, &context);
    let fine = fine_grained(&lookup_probs, dict);
    LookupTrace {
        context,
        activated,
        lookup: lookup_probs,
        fine_grained: fine,
        central,
    }
}

/// Parameter gradients produced by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LookupGrads {
    /// `n x d`, row-major like the dictionary.
    pub dict: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub entity: Vec<f64>,
}

/// Chain rule from the gradients on the fine-grained and central semantics
/// back to the dictionary, the MLP and the query entity.
///
/// The dictionary is reached along three paths: the weighted sum, the
/// center inside the context, and the center itself (`grad_central`).
pub fn backward(
    kind: CompositionKind,
    trace: &LookupTrace,
    mlp: &LookupMlp<'_>,
    dict: &RelationDictionary<'_>,
    entity: &[f64],
    grad_fine: &[f64],
    grad_central: &[f64],
) -> LookupGrads {
    let n = dict.size;
    let d = dict.dim;
    assert_eq!(trace.lookup.len(), n, "trace does not match dictionary");
    assert_eq!(mlp.size(), n, "MLP does not match dictionary");
    assert_eq!(grad_fine.len(), d, "fine-grained gradient length");
    assert_eq!(grad_central.len(), d, "central gradient length");

    let mut g_dict = vec![0.0f64; n * d];
    let mut g_lookup = vec![0.0f64; n];
    for i in 0..n {
        let row = dict.row(i);
        let p = trace.lookup[i];
        let mut acc = 0.0;
        for k in 0..d {
            acc += grad_fine[k] * f64::from(row[k]);
            g_dict[i * d + k] = p * grad_fine[k];
        }
        g_lookup[i] = acc;
    }

    let mean_g: f64 = trace.lookup.iter().zip(&g_lookup).map(|(p, g)| p * g).sum();
    let g_pre: Vec<f64> = trace
        .lookup
        .iter()
        .zip(&g_lookup)
        .zip(&trace.activated)
        .map(|((p, g), &y)| p * (g - mean_g) * mlp.activation.derivative_from_output(y))
        .collect();

    let dc = mlp.context_dim;
    let mut g_weight = vec![0.0f64; dc * n];
    let mut g_context = vec![0.0f64; dc];
    for i in 0..dc {
        let c = trace.context[i];
        let w = &mlp.weight[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            g_weight[i * n + j] = c * g_pre[j];
            acc += f64::from(w[j]) * g_pre[j];
        }
        g_context[i] = acc;
    }

    let (g_entity, g_center_ctx) = compose_backward(kind, entity, &trace.central, &g_context);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for k in 0..d {
            g_dict[i * d + k] += (grad_central[k] + g_center_ctx[k]) * inv_n;
        }
    }

    LookupGrads {
        dict: g_dict,
        weight: g_weight,
        bias: g_pre,
        entity: g_entity,
    }
}
