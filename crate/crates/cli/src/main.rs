//! `decoyforge`: audit, regenerate, and benchmark multiple-choice QA decoys.

mod commands;
mod config;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decoyforge::corpus::CorpusFormat;
use decoyforge::model::Metric;
use decoyforge::wordnet::TaxonomyFormat;
use decoyforge::{DecoySet, FallbackPool, Mode};
use serde_json::json;

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "decoyforge", version, args_override_self = true, about = "Audit and regenerate decoys for multiple-choice visual QA corpora")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// canonical-jsonl, vqa-style, or v7w-style.
    #[arg(long, global = true)]
    format: Option<CorpusFormat>,
    /// Word vectors, text or DFEM binary.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    /// edge-list or wordnet-db.
    #[arg(long, global = true)]
    taxonomy_format: Option<TaxonomyFormat>,
    /// Image feature store (DFFS binary).
    #[arg(long, global = true)]
    features: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a corpus in any supported layout and write it as canonical JSONL.
    Ingest {
        /// Drop records whose target is yes or no.
        #[arg(long)]
        drop_yes_no: bool,
    },
    /// Check corpus invariants; exits nonzero when any are violated.
    Validate,
    /// Measure how well answer frequency alone picks the target.
    Audit {
        /// Decoy sets to audit; defaults to orig plus every generated set.
        #[arg(long = "decoy-set", value_delimiter = ',')]
        decoy_sets: Vec<DecoySet>,
    },
    /// Generate decoys for every record.
    Gen(GenArgs),
    /// Train the answer scorer on the train split of one decoy set.
    Train(TrainArgs),
    /// Evaluate a trained scorer.
    Eval(EvalArgs),
    /// Collect every evaluation into a model-by-decoy-set table.
    Report,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// orig, iou, qou, iou+qou, or all.
    #[arg(long, default_value = "iou+qou")]
    mode: DecoySet,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    topn: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// orig-decoys or frequent-targets.
    #[arg(long)]
    fallback: Option<FallbackPool>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// A, QA, IA, or IQA.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "iou+qou")]
    decoy_set: DecoySet,
    /// Checkpoint to continue from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Reads candidates from this file instead of the generated set.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Accepted for symmetry with eval; only recorded in the manifest.
    #[arg(long)]
    metric: Option<Metric>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "iou+qou")]
    decoy_set: DecoySet,
    /// plain or vqa-clipped.
    #[arg(long)]
    metric: Option<Metric>,
    /// Checkpoint to evaluate instead of the trained one for this mode and set.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "test")]
    split: decoyforge::Split,
    #[arg(long)]
    candidates: Option<PathBuf>,
}

fn apply_globals(cfg: &mut PipelineConfig, g: &GlobalArgs) {
    let p = &mut cfg.paths;
    if let Some(v) = &g.out {
        p.output = Some(v.clone());
    }
    if let Some(v) = &g.corpus {
        p.corpus = Some(v.clone());
    }
    if let Some(v) = g.format {
        p.format = Some(v);
    }
    if let Some(v) = &g.embeddings {
        p.embeddings = Some(v.clone());
    }
    if let Some(v) = &g.taxonomy {
        p.taxonomy = Some(v.clone());
    }
    if let Some(v) = g.taxonomy_format {
        p.taxonomy_format = Some(v);
    }
    if let Some(v) = &g.features {
        p.features = Some(v.clone());
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("DECOYFORGE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| decoyforge::Error::Config {
        field: "DECOYFORGE_THREADS".into(),
        message: format!("must be a positive integer, got `{raw}`"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let mut cfg = PipelineConfig::load(cli.global.config.as_deref())?;
    apply_globals(&mut cfg, &cli.global);
    match cli.command {
        Command::Ingest { drop_yes_no } => commands::ingest(&cfg, drop_yes_no),
        Command::Validate => commands::validate(&cfg),
        Command::Audit { decoy_sets } => commands::audit(&cfg, &decoy_sets),
        Command::Gen(a) => {
            if let Some(seed) = a.seed {
                cfg.gen.seed = seed;
            }
            if let Some(k) = a.k {
                cfg.gen.k = k;
            }
            if let Some(n) = a.topn {
                cfg.gen.topn = n;
            }
            if let Some(t) = a.threshold {
                cfg.gen.wup_threshold = t;
            }
            if let Some(f) = a.fallback {
                cfg.gen.fallback = f;
            }
            commands::gen(&cfg, a.mode)
        }
        Command::Train(a) => {
            if let Some(m) = a.mode {
                cfg.train.mode = m;
            }
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
            }
            if let Some(n) = a.max_iters {
                cfg.train.max_iters = n;
            }
            if let Some(h) = a.hidden {
                cfg.train.hidden = h;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr0 = lr;
            }
            if let Some(d) = a.dropout {
                cfg.train.dropout = d;
            }
            if let Some(m) = a.metric {
                cfg.metric = m;
            }
            commands::train(&cfg, a.decoy_set, a.init.as_deref(), a.candidates.as_deref())
        }
        Command::Eval(a) => {
            if let Some(m) = a.mode {
                cfg.train.mode = m;
            }
            if let Some(m) = a.metric {
                cfg.metric = m;
            }
            if let Some(seed) = a.seed {
                cfg.set_seed(seed);
            }
            commands::eval(&cfg, a.decoy_set, a.split, a.init.as_deref(), a.candidates.as_deref())
        }
        Command::Report => commands::report(&cfg),
    }
}

/// Machine-readable error record for stderr.
fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let core = err.chain().find_map(|e| e.downcast_ref::<decoyforge::Error>());
    let (kind, field) = match core {
        Some(decoyforge::Error::Config { field, .. }) => ("config", Some(field.clone())),
        Some(decoyforge::Error::Io { .. }) => ("io", None),
        Some(decoyforge::Error::Parse { .. } | decoyforge::Error::Json(_)) => ("parse", None),
        Some(decoyforge::Error::Checkpoint(_)) => ("checkpoint", None),
        Some(_) => ("data", None),
        None if err.downcast_ref::<commands::ValidationFailed>().is_some() => ("validation", None),
        None => ("runtime", None),
    };
    let message = err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ");
    let mut record = json!({ "schema_version": decoyforge::SCHEMA_VERSION, "error": { "kind": kind, "message": message } });
    if let Some(field) = field {
        record["error"]["field"] = json!(field);
    }
    record
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({
                "schema_version": decoyforge::SCHEMA_VERSION,
                "error": { "kind": "usage", "message": e.to_string().trim() },
            });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = error_record(&err);
            eprintln!("{record}");
            if record["error"]["kind"] == "config" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
