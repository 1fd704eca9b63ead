use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use codlr::config::PRESETS;
use codlr::data::{self, SynthSpec};
use codlr::metrics;
use codlr::projection;
use codlr::{Checkpoint, EpochStats, RunConfig, Split, Trainer, TrainConfig, TripleStore};

#[derive(Parser)]
#[command(name = "codlr", version, about = "Knowledge graph completion with contextual dictionary lookup")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load tab-separated split files and write a binary cache.
    Prepare(PrepareArgs),
    /// Generate a synthetic graph with one multi-semantics relation.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Filtered ranking metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Lookup sparseness and dictionary alignment diagnostics.
    Diagnose(DiagnoseArgs),
    /// PCA projection of a relation's head entities, labelled by lookup argmax.
    Project(ProjectArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Output cache file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of clusters (k).
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    /// Entities per cluster (m).
    #[arg(long, default_value_t = 50)]
    per_cluster: usize,
    /// Embedding dimension written to synth.conf.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Refuse to generate more entities than this.
    #[arg(long, default_value_t = 1 << 20)]
    max_entities: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named hyperparameter preset.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Override one config key, e.g. `--set lambda=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Split directory or cache file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_ckpt: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Thread pool size (results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Seed of the tie-breaking draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for sol_curve.csv and dae.csv.
    #[arg(long)]
    out: PathBuf,
    /// Queries the SOL mean is taken over.
    #[arg(long, default_value = "train")]
    split: Split,
    /// Training log whose per-epoch SOL means precede the checkpoint's own.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Relation name, e.g. `rel_multi`.
    #[arg(long)]
    relation: String,
    #[arg(long)]
    out: PathBuf,
}

/// A bad invocation rather than a failed run; exits with code 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<Usage>() || e.downcast_ref::<codlr::Error>().is_some_and(codlr::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Project(a) => project(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn prepare(a: PrepareArgs) -> anyhow::Result<()> {
    let store = data::load_splits(&a.train, &a.valid, &a.test)?;
    if store.base_triples(Split::Train).is_empty() {
        return Err(usage(format!("{}: no training triples", a.train.display())));
    }
    store
        .write_cache(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", store.stats_line());
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        cluster_count: a.clusters,
        entities_per_cluster: a.per_cluster,
        dimension_hint: a.dim,
        noise_rate: a.noise,
        seed: a.seed,
        max_entities: a.max_entities,
    };
    let summary = data::generate_synthetic(&spec, &a.out)?;
    println!(
        "triples={} noisy={} entities={} out={}",
        summary.triples,
        summary.noisy,
        summary.clusters.len(),
        a.out.display()
    );
    Ok(())
}

fn run_config(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &a.preset {
        cfg.train = TrainConfig::preset(p)?;
    }
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.merge_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(p) = &a.out_ckpt {
        cfg.out_ckpt = Some(p.clone());
    }
    if let Some(p) = &a.log {
        cfg.log = Some(p.clone());
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = run_config(&a)?;
    let data = cfg.data.clone().ok_or_else(|| usage("no data given (--data or `data =`)"))?;
    let out = cfg
        .out_ckpt
        .clone()
        .ok_or_else(|| usage("no checkpoint path given (--out-ckpt or `out_ckpt =`)"))?;
    print!("{}", cfg.train.canonical_text());
    println!("data = {}", data.display());

    let store = data::open(&data).with_context(|| format!("loading {}", data.display()))?;
    println!("{}", store.stats_line());
    let mut log = match &cfg.log {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            writeln!(f, "{}", EpochStats::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };

    let trainer = codlr::par::install(cfg.workers, || -> anyhow::Result<Trainer> {
        let mut trainer = Trainer::new(cfg.train.clone(), &store)?;
        trainer.fit(&store, |_, stats| {
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", stats.csv_row())?;
            }
            eprintln!(
                "epoch {:>4}  loss {:.6}{}",
                stats.epoch,
                stats.loss,
                stats.valid_mrr.map(|m| format!("  valid_mrr {m:.4}")).unwrap_or_default()
            );
            Ok(())
        })?;
        Ok(trainer)
    })??;
    Checkpoint::new(trainer, store.vocab())
        .save(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("checkpoint = {}", out.display());
    Ok(())
}

fn load_pair(ckpt: &Path, data: &Path) -> anyhow::Result<(Checkpoint, TripleStore)> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let store = data::open(data).with_context(|| format!("loading {}", data.display()))?;
    ck.verify(&store)?;
    Ok((ck, store))
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (ck, store) = load_pair(&a.ckpt, &a.data)?;
    let m = codlr::par::install(a.workers, || metrics::evaluate(ck.params(), &store, a.split, a.seed))??;
    let csv = m.to_csv();
    match &a.out {
        Some(path) => {
            metrics::write_text(path, &csv)?;
            println!(
                "split={} count={} mr={:.3} mrr={:.4} hits@1={:.4} hits@3={:.4} hits@10={:.4}",
                a.split.name(),
                m.count,
                m.mr,
                m.mrr,
                m.hits1,
                m.hits3,
                m.hits10
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> anyhow::Result<()> {
    let (ck, store) = load_pair(&a.ckpt, &a.data)?;
    let diag = codlr::par::install(a.workers, || metrics::diagnose(ck.params(), &store, a.split))??;
    let mut curve = match &a.log {
        Some(path) => sol_points_from_log(path)?,
        None => Vec::new(),
    };
    let epoch = ck.trainer.epoch;
    curve.retain(|&(e, _)| e < epoch);
    curve.push((epoch, diag.sol_mean));
    metrics::write_text(&a.out.join("sol_curve.csv"), &metrics::sol_curve_csv(&curve))?;
    metrics::write_text(&a.out.join("dae.csv"), &metrics::dae_csv(&diag.dae, &store))?;
    println!(
        "sol_mean={:.6} dae_mean={:.6} relations={}",
        diag.sol_mean,
        diag.dae_mean,
        diag.dae.len()
    );
    Ok(())
}

/// `(epoch, sol_mean)` pairs of a training log, skipping epochs without a value.
fn sol_points_from_log(path: &Path) -> anyhow::Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(ei), Some(si)) = (col("epoch"), col("sol_mean")) else {
        bail!("{}: not a training log (needs epoch and sol_mean columns)", path.display());
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || anyhow::anyhow!("{}:{}: malformed row", path.display(), i + 2);
        let epoch: usize = fields.get(ei).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        match fields.get(si).copied() {
            Some("") | None => {}
            Some(s) => out.push((epoch, s.parse().map_err(|_| bad())?)),
        }
    }
    Ok(out)
}

fn project(a: ProjectArgs) -> anyhow::Result<()> {
    let (ck, store) = load_pair(&a.ckpt, &a.data)?;
    let Some(rel) = store.vocab().relation_id(&a.relation) else {
        let near = store.vocab().nearest_relations(&a.relation, 5);
        return Err(usage(format!(
            "unknown relation '{}'; nearest matches: {}",
            a.relation,
            near.join(", ")
        )));
    };
    let points = projection::project_relation(ck.params(), &store, rel)?;
    metrics::write_text(&a.out, &projection::projection_csv(&points, &store))?;
    println!("points={} out={}", points.len(), a.out.display());
    Ok(())
}
