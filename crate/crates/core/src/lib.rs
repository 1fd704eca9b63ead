//! Knowledge graph completion with contextual dictionary lookup.
//!
//! TransE and DistMult link predictors whose relations are represented
//! either by a single vector (plain) or by a dictionary of fine-grained
//! semantic vectors selected per query through an attention-style lookup
//! (codlr). Training uses kvsAll with binary cross-entropy and Adam;
//! evaluation reports filtered MR/MRR/Hits@k and the SOL/DIV/DAE lookup
//! diagnostics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod lookup;
pub mod metrics;
pub mod model;
pub mod ndmath;
pub mod par;
pub mod projection;
pub mod scorer;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{Mode, RunConfig, ScoreFunction, TrainConfig};
pub use data::{Split, SynthSpec, TripleStore, Vocab};
pub use error::{Error, Result};
pub use lookup::{CompositionKind, LookupTrace};
pub use metrics::{Diagnostics, RankMetrics};
pub use model::ModelParams;
pub use ndmath::Activation;
pub use scorer::ScoreBatch;
pub use trainer::{EpochStats, Trainer};
