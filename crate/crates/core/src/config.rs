//! Training configuration and the flat `key = value` run-config format.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lookup::CompositionKind;
use crate::ndmath::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFunction {
    #[default]
    TransE,
    DistMult,
}

impl ScoreFunction {
    pub fn name(self) -> &'static str {
        match self {
            ScoreFunction::TransE => "transe",
            ScoreFunction::DistMult => "distmult",
        }
    }
}

impl FromStr for ScoreFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transe" => Ok(ScoreFunction::TransE),
            "distmult" => Ok(ScoreFunction::DistMult),
            other => Err(Error::Config(format!("unknown scorer '{other}'"))),
        }
    }
}

/// Plain models keep one vector per relation; `Codlr` keeps a dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Plain,
    #[default]
    Codlr,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Codlr => "codlr",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "codlr" => Ok(Mode::Codlr),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scorer: ScoreFunction,
    pub mode: Mode,
    pub dim: usize,
    pub dict_size: usize,
    pub composition: CompositionKind,
    /// Weight of the central-semantics loss; `0` trains fine-grained only.
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub activation: Activation,
    pub seed: u64,
    pub label_smoothing: f64,
    /// Validation MRR every this many epochs; `0` disables it.
    pub eval_every: usize,
    /// One lookup MLP per relation instead of a shared one.
    pub mlp_per_relation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scorer: ScoreFunction::TransE,
            mode: Mode::Codlr,
            dim: 100,
            dict_size: 7,
            composition: CompositionKind::Sum,
            lambda: 0.001,
            batch_size: 256,
            learning_rate: 0.001,
            epochs: 400,
            activation: Activation::Relu,
            seed: 42,
            label_smoothing: 0.0,
            eval_every: 0,
            mlp_per_relation: false,
        }
    }
}

const TRAIN_KEYS: [&str; 14] = [
    "scorer",
    "mode",
    "dim",
    "dict_size",
    "composition",
    "lambda",
    "batch_size",
    "learning_rate",
    "epochs",
    "activation",
    "seed",
    "label_smoothing",
    "eval_every",
    "mlp_per_relation",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return fail("dim: must be positive".into());
        }
        if self.mode == Mode::Codlr && self.dict_size < 2 {
            return fail("dict_size: must be at least 2 in codlr mode".into());
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return fail(format!("lambda: {} outside [0, 1)", self.lambda));
        }
        if self.batch_size == 0 {
            return fail("batch_size: must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate: must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs: must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing: must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Sets one field from its textual form. Does not validate cross-field constraints.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scorer" => self.scorer = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "dim" => self.dim = parse_value(key, value)?,
            "dict_size" => self.dict_size = parse_value(key, value)?,
            "composition" => self.composition = value.parse()?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "activation" => self.activation = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "label_smoothing" => self.label_smoothing = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "mlp_per_relation" => self.mlp_per_relation = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        TRAIN_KEYS.contains(&key)
    }

    /// Fixed-order `key = value` lines; parsing them back yields an equal config.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("scorer", self.scorer.name().into());
        line("mode", self.mode.name().into());
        line("dim", self.dim.to_string());
        line("dict_size", self.dict_size.to_string());
        line("composition", self.composition.name().into());
        line("lambda", self.lambda.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("epochs", self.epochs.to_string());
        line("activation", self.activation.name().into());
        line("seed", self.seed.to_string());
        line("label_smoothing", self.label_smoothing.to_string());
        line("eval_every", self.eval_every.to_string());
        line("mlp_per_relation", self.mlp_per_relation.to_string());
        s
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value) in parse_lines(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    /// Named hyperparameter presets for the two public benchmarks.
    pub fn preset(name: &str) -> Result<Self> {
        let (scorer, dim, composition, dict_size, lambda, batch_size, learning_rate, epochs) =
            match name {
                "codlr-transe-fb15k237" => {
                    (ScoreFunction::TransE, 100, CompositionKind::Sum, 7, 0.001, 256, 0.001, 400)
                }
                "codlr-distmult-fb15k237" => {
                    (ScoreFunction::DistMult, 200, CompositionKind::Corr, 5, 0.1, 1024, 0.00015, 400)
                }
                "codlr-transe-wn18rr" => {
                    (ScoreFunction::TransE, 100, CompositionKind::Corr, 5, 0.01, 128, 0.00018, 400)
                }
                "codlr-distmult-wn18rr" => {
                    (ScoreFunction::DistMult, 500, CompositionKind::Mult, 3, 0.000005, 16, 0.0002, 120)
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown preset '{other}' (known: {})",
                        PRESETS.join(", ")
                    )))
                }
            };
        Ok(Self {
            scorer,
            mode: Mode::Codlr,
            dim,
            dict_size,
            composition,
            lambda,
            batch_size,
            learning_rate,
            epochs,
            ..Self::default()
        })
    }
}

pub const PRESETS: [&str; 4] = [
    "codlr-transe-fb15k237",
    "codlr-distmult-fb15k237",
    "codlr-transe-wn18rr",
    "codlr-distmult-wn18rr",
];

/// Splits `key = value` lines, dropping blank lines and `#` comments.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Training config plus the file paths and worker count of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out_ckpt: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(value.into()),
            "out_ckpt" => self.out_ckpt = Some(value.into()),
            "log" => self.log = Some(value.into()),
            "workers" => self.workers = Some(parse_value(key, value)?),
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_lines(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }
}
