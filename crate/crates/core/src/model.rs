//! Model parameters: entity embeddings, relation vectors or dictionaries,
//! and the lookup MLP weights.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, ScoreFunction, TrainConfig};
use crate::error::{Error, Result};
use crate::lookup::{self, CompositionKind, LookupMlp, LookupTrace, RelationDictionary};
use crate::ndmath::{self, Activation};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub scorer: ScoreFunction,
    pub mode: Mode,
    pub composition: CompositionKind,
    pub activation: Activation,
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim: usize,
    /// Dictionary rows per relation; 1 in plain mode.
    pub dict_size: usize,
    /// Number of lookup MLPs: 0 (plain), 1 (shared) or one per relation.
    pub num_mlps: usize,
    /// `num_entities x dim`
    pub entity: Vec<f32>,
    /// `num_relations x dict_size x dim`
    pub relation: Vec<f32>,
    /// `num_mlps x context_dim x dict_size`
    pub mlp_weight: Vec<f32>,
    /// `num_mlps x dict_size`
    pub mlp_bias: Vec<f32>,
}

/// Forward state of one `(head, relation)` query.
#[derive(Debug, Clone)]
pub struct QueryForward {
    pub head: u32,
    pub relation: u32,
    pub head_vec: Vec<f64>,
    /// Relation vector in plain mode; fine-grained semantics in codlr mode.
    pub semantics: Vec<f64>,
    pub trace: Option<LookupTrace>,
}

impl ModelParams {
    /// Random initialization.
    ///
    /// Entities: uniform in `[-1/sqrt(d), 1/sqrt(d)]`. Relation vectors and
    /// dictionary entries: uniform in `[-0.5/sqrt(d), 0.5/sqrt(d)]`. MLP
    /// weights: Glorot uniform. MLP bias: zero.
    pub fn init(config: &TrainConfig, num_entities: usize, num_relations: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = config.dim;
        let (dict_size, num_mlps) = match config.mode {
            Mode::Plain => (1, 0),
            Mode::Codlr if config.mlp_per_relation => (config.dict_size, num_relations),
            Mode::Codlr => (config.dict_size, 1),
        };
        let context_dim = config.composition.context_dim(dim);
        let scale = (dim as f32).sqrt().recip();
        let mut draw = |n: usize, limit: f32| -> Vec<f32> {
            let dist = Uniform::new_inclusive(-limit, limit);
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let entity = draw(num_entities * dim, scale);
        let relation = draw(num_relations * dict_size * dim, 0.5 * scale);
        let glorot = (6.0 / (context_dim + dict_size) as f32).sqrt();
        let mlp_weight = draw(num_mlps * context_dim * dict_size, glorot);
        Self {
            scorer: config.scorer,
            mode: config.mode,
            composition: config.composition,
            activation: config.activation,
            num_entities,
            num_relations,
            dim,
            dict_size,
            num_mlps,
            entity,
            relation,
            mlp_weight,
            mlp_bias: vec![0.0; num_mlps * dict_size],
        }
    }

    pub fn context_dim(&self) -> usize {
        self.composition.context_dim(self.dim)
    }

    pub fn entity(&self, e: u32) -> &[f32] {
        let d = self.dim;
        &self.entity[e as usize * d..(e as usize + 1) * d]
    }

    /// Plain-mode relation vector, or the flattened dictionary in codlr mode.
    pub fn relation_block(&self, r: u32) -> &[f32] {
        let len = self.dict_size * self.dim;
        &self.relation[r as usize * len..(r as usize + 1) * len]
    }

    pub fn dictionary(&self, r: u32) -> RelationDictionary<'_> {
        RelationDictionary::new(self.relation_block(r), self.dict_size, self.dim)
    }

    pub fn mlp_index(&self, r: u32) -> usize {
        if self.num_mlps > 1 {
            r as usize
        } else {
            0
        }
    }

    pub fn mlp(&self, r: u32) -> LookupMlp<'_> {
        let m = self.mlp_index(r);
        let n = self.dict_size;
        let wlen = self.context_dim() * n;
        LookupMlp::new(
            &self.mlp_weight[m * wlen..(m + 1) * wlen],
            &self.mlp_bias[m * n..(m + 1) * n],
            self.context_dim(),
            self.activation,
        )
    }

    /// Lookup trace for a query; plain-mode models have none.
    pub fn lookup(&self, head: u32, rel: u32) -> Result<LookupTrace> {
        if self.mode != Mode::Codlr {
            return Err(Error::Invalid("lookup requires codlr mode".into()));
        }
        let h = ndmath::to_f64(self.entity(head));
        Ok(lookup::forward(
            self.composition,
            &self.mlp(rel),
            &self.dictionary(rel),
            &h,
        ))
    }

    pub fn forward_query(&self, head: u32, rel: u32) -> QueryForward {
        let head_vec = ndmath::to_f64(self.entity(head));
        match self.mode {
            Mode::Plain => QueryForward {
                head,
                relation: rel,
                semantics: ndmath::to_f64(self.relation_block(rel)),
                head_vec,
                trace: None,
            },
            Mode::Codlr => {
                let trace = lookup::forward(
                    self.composition,
                    &self.mlp(rel),
                    &self.dictionary(rel),
                    &head_vec,
                );
                QueryForward {
                    head,
                    relation: rel,
                    semantics: trace.fine_grained.clone(),
                    head_vec,
                    trace: Some(trace),
                }
            }
        }
    }

    /// Tensors in a fixed order with their names and shapes.
    pub fn tensors(&self) -> [(&'static str, Vec<usize>, &[f32]); 4] {
        let relation_shape = match self.mode {
            Mode::Plain => vec![self.num_relations, self.dim],
            Mode::Codlr => vec![self.num_relations, self.dict_size, self.dim],
        };
        [
            ("entity", vec![self.num_entities, self.dim], &self.entity),
            ("relation", relation_shape, &self.relation),
            (
                "mlp.weight",
                vec![self.num_mlps, self.context_dim(), self.dict_size],
                &self.mlp_weight,
            ),
            ("mlp.bias", vec![self.num_mlps, self.dict_size], &self.mlp_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 4] {
        [
            &mut self.entity,
            &mut self.relation,
            &mut self.mlp_weight,
            &mut self.mlp_bias,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.entity.len() + self.relation.len() + self.mlp_weight.len() + self.mlp_bias.len()
    }

    /// All parameters concatenated in tensor order, widened to `f64`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.entity
            .iter()
            .chain(&self.relation)
            .chain(&self.mlp_weight)
            .chain(&self.mlp_bias)
            .map(|&x| f64::from(x))
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_parameters(), "flat parameter length");
        let mut it = flat.iter();
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *it.next().unwrap() as f32;
            }
        }
    }
}
