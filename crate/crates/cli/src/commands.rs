//! One function per subcommand. Artifacts land under the output directory:
//!
//! ```text
//! ingest/corpus.jsonl, ingest/summary.json
//! validate/report.json
//! audit/report.json
//! gen/<set>/candidates.jsonl, gen/<set>/report.json
//! train/<mode>_<set>/model.dfmp, train/<mode>_<set>/log.jsonl
//! eval/<mode>_<set>/eval.json
//! report/report.json, report/report.txt
//! ```
//!
//! Every stage directory also gets a `manifest.json`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use decoyforge::audit::{audit as audit_items, chance_rate, AuditReport};
use decoyforge::corpus::{filter_yes_no, load_corpus, validate as validate_corpus, write_corpus};
use decoyforge::decoygen::{read_candidates, remediate_corpus, write_candidates};
use decoyforge::model::{evaluate, read_checkpoint, train_with_validation, write_checkpoint, write_log};
use decoyforge::{CandidateSet, Corpus, DecoySet, EmbeddingTable, Error, FeatureStore, Split, Taxonomy};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::manifest::{write_json, Manifest};
use crate::report::{EvalRecord, Grid};

fn slug(set: DecoySet) -> String {
    set.as_str().replace('+', "_")
}

fn stage_dir(cfg: &PipelineConfig, parts: &[&str]) -> anyhow::Result<PathBuf> {
    let mut dir = cfg.output();
    for p in parts {
        dir.push(p);
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_corpus_input(cfg: &PipelineConfig, manifest: &mut Manifest) -> anyhow::Result<Corpus> {
    let path = cfg.require("corpus")?;
    manifest.input("corpus", path)?;
    Ok(load_corpus(path, cfg.corpus_format())?)
}

/// Text or `DFEM` binary, decided by the first four bytes.
fn load_embeddings(cfg: &PipelineConfig, manifest: &mut Manifest) -> anyhow::Result<EmbeddingTable> {
    let path = cfg.require("embeddings")?;
    manifest.input("embeddings", path)?;
    let mut magic = [0u8; 4];
    let binary = std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == b"DFEM")
        .unwrap_or(false);
    Ok(if binary {
        EmbeddingTable::load_binary(path)?
    } else {
        EmbeddingTable::load_text(path)?
    })
}

fn load_taxonomy(cfg: &PipelineConfig, manifest: &mut Manifest) -> anyhow::Result<Taxonomy> {
    let path = cfg.require("taxonomy")?;
    manifest.input("taxonomy", path)?;
    Ok(Taxonomy::load(path, cfg.taxonomy_format())?)
}

fn load_features(cfg: &PipelineConfig, manifest: &mut Manifest) -> anyhow::Result<FeatureStore> {
    let path = cfg.require("features")?;
    manifest.input("features", path)?;
    Ok(FeatureStore::load(path)?)
}

/// Candidate sets for `set`: the corpus's own decoys for `orig`, otherwise
/// the output of an earlier `gen` run.
fn load_items(cfg: &PipelineConfig, set: DecoySet, explicit: Option<&Path>, manifest: &mut Manifest) -> anyhow::Result<Vec<CandidateSet>> {
    if let Some(path) = explicit {
        manifest.input("candidates", path)?;
        return Ok(read_candidates(path)?);
    }
    if set == DecoySet::Orig {
        let corpus = load_corpus_input(cfg, manifest)?;
        return Ok(corpus.records().iter().map(CandidateSet::from_original).collect());
    }
    let path = cfg.output().join("gen").join(slug(set)).join("candidates.jsonl");
    if !path.exists() {
        return Err(Error::Config {
            field: "decoy-set".into(),
            message: format!("no candidates at {}; run `decoyforge gen --mode {set}` first", path.display()),
        }
        .into());
    }
    manifest.input("candidates", &path)?;
    Ok(read_candidates(&path)?)
}

fn in_split(items: &[CandidateSet], split: Split) -> Vec<CandidateSet> {
    items.iter().filter(|it| it.split == split).cloned().collect()
}

#[derive(Serialize)]
struct IngestSummary {
    schema_version: u32,
    records: usize,
    images: usize,
    splits: BTreeMap<Split, usize>,
    dropped_yes_no: usize,
}

pub fn ingest(cfg: &PipelineConfig, drop_yes_no: bool) -> anyhow::Result<()> {
    let mut manifest = Manifest::new("ingest", cfg, cfg.seed);
    let mut corpus = load_corpus_input(cfg, &mut manifest)?;
    let before = corpus.len();
    if drop_yes_no {
        corpus = filter_yes_no(&corpus);
    }
    let dir = stage_dir(cfg, &["ingest"])?;
    let out = dir.join("corpus.jsonl");
    write_corpus(&corpus, &out)?;
    let summary = IngestSummary {
        schema_version: decoyforge::SCHEMA_VERSION,
        records: corpus.len(),
        images: corpus.image_index().len(),
        splits: corpus.split_counts().clone(),
        dropped_yes_no: before - corpus.len(),
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    manifest.output("corpus", &out)?;
    manifest.output("summary", &summary_path)?;
    manifest.write(&dir)?;
    println!("ingested {} records over {} images into {}", summary.records, summary.images, out.display());
    Ok(())
}

#[derive(Debug)]
pub struct ValidationFailed {
    pub violations: usize,
    pub report: PathBuf,
}

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} invariant violations, see {}", self.violations, self.report.display())
    }
}

impl std::error::Error for ValidationFailed {}

#[derive(Serialize)]
struct ValidationOutput<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a decoyforge::corpus::ValidationReport,
}

pub fn validate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let mut manifest = Manifest::new("validate", cfg, cfg.seed);
    let corpus = load_corpus_input(cfg, &mut manifest)?;
    let features = if cfg.paths.features.is_some() {
        Some(load_features(cfg, &mut manifest)?)
    } else {
        None
    };
    let report = validate_corpus(&corpus, features.as_ref());
    let dir = stage_dir(cfg, &["validate"])?;
    let path = dir.join("report.json");
    write_json(
        &path,
        &ValidationOutput {
            schema_version: decoyforge::SCHEMA_VERSION,
            report: &report,
        },
    )?;
    manifest.output("report", &path)?;
    manifest.write(&dir)?;
    if !report.is_clean() {
        return Err(ValidationFailed {
            violations: report.violations.len(),
            report: path,
        }
        .into());
    }
    println!("{} records, no violations", report.records);
    Ok(())
}

#[derive(Serialize)]
struct AuditOutput {
    schema_version: u32,
    sets: BTreeMap<DecoySet, AuditReport>,
}

pub fn audit(cfg: &PipelineConfig, requested: &[DecoySet]) -> anyhow::Result<()> {
    let mut manifest = Manifest::new("audit", cfg, cfg.seed);
    let sets: Vec<DecoySet> = if requested.is_empty() {
        DecoySet::ALL
            .into_iter()
            .filter(|s| *s == DecoySet::Orig || cfg.output().join("gen").join(slug(*s)).join("candidates.jsonl").exists())
            .collect()
    } else {
        requested.to_vec()
    };
    let mut output = AuditOutput {
        schema_version: decoyforge::SCHEMA_VERSION,
        sets: BTreeMap::new(),
    };
    for set in sets {
        let mut sub = Manifest::new("audit", cfg, cfg.seed);
        let items = load_items(cfg, set, None, &mut sub)?;
        for (name, digest) in sub.inputs {
            manifest.inputs.insert(format!("{name}:{set}"), digest);
        }
        let train = in_split(&items, Split::Train);
        let evals: Vec<(String, Vec<CandidateSet>)> = [Split::Val, Split::Test]
            .into_iter()
            .map(|s| (s.as_str().to_string(), in_split(&items, s)))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let report = audit_items(&train, &evals);
        for (split, acc) in &report.rule_accuracy {
            println!("{set:>8} {split:<5} rule accuracy {:.3} (chance {:.3})", acc, report.chance[split]);
        }
        output.sets.insert(set, report);
    }
    let dir = stage_dir(cfg, &["audit"])?;
    let path = dir.join("report.json");
    write_json(&path, &output)?;
    manifest.output("report", &path)?;
    manifest.write(&dir)?;
    Ok(())
}

pub fn gen(cfg: &PipelineConfig, mode: DecoySet) -> anyhow::Result<()> {
    cfg.gen.validate()?;
    let mut manifest = Manifest::new(&format!("gen --mode {mode}"), cfg, cfg.gen.seed);
    let corpus = load_corpus_input(cfg, &mut manifest)?;
    let table = load_embeddings(cfg, &mut manifest)?;
    let taxonomy = load_taxonomy(cfg, &mut manifest)?;
    let (sets, report) = remediate_corpus(&corpus, &table, &taxonomy, &cfg.gen, mode)?;
    let dir = stage_dir(cfg, &["gen", &slug(mode)])?;
    let candidates = dir.join("candidates.jsonl");
    let report_path = dir.join("report.json");
    write_candidates(&candidates, &sets)?;
    write_json(&report_path, &report)?;
    manifest.output("candidates", &candidates)?;
    manifest.output("report", &report_path)?;
    manifest.write(&dir)?;
    println!(
        "{} candidate sets ({mode}) in {}; shortfall qou {:.3} iou {:.3}",
        sets.len(),
        candidates.display(),
        report.qou.shortfall_rate,
        report.iou.shortfall_rate
    );
    Ok(())
}

fn model_features(cfg: &PipelineConfig, manifest: &mut Manifest) -> anyhow::Result<FeatureStore> {
    if cfg.train.mode.uses_image() || cfg.paths.features.is_some() {
        load_features(cfg, manifest)
    } else {
        Ok(FeatureStore::new(0))
    }
}

fn run_name(cfg: &PipelineConfig, set: DecoySet) -> String {
    format!("{}_{}", cfg.train.mode, slug(set))
}

pub fn train(cfg: &PipelineConfig, set: DecoySet, init: Option<&Path>, candidates: Option<&Path>) -> anyhow::Result<()> {
    cfg.train.validate()?;
    let mut train_cfg = cfg.train.clone();
    let mut manifest = Manifest::new(&format!("train --mode {} --decoy-set {set}", cfg.train.mode), cfg, train_cfg.seed);
    if let Some(path) = init {
        manifest.input("init", path)?;
        train_cfg.init = Some(read_checkpoint(path)?);
    }
    let items = load_items(cfg, set, candidates, &mut manifest)?;
    let table = load_embeddings(cfg, &mut manifest)?;
    let features = model_features(cfg, &mut manifest)?;
    let train_items = in_split(&items, Split::Train);
    if train_items.is_empty() {
        return Err(Error::Config {
            field: "decoy-set".into(),
            message: format!("no train-split items in {set}"),
        }
        .into());
    }
    let val = in_split(&items, Split::Val);
    let (params, log) = train_with_validation(&train_items, (!val.is_empty()).then_some(val.as_slice()), &train_cfg, &features, &table)?;
    let dir = stage_dir(cfg, &["train", &run_name(cfg, set)])?;
    let model = dir.join("model.dfmp");
    let log_path = dir.join("log.jsonl");
    write_checkpoint(&model, &params)?;
    write_log(&log_path, &log)?;
    manifest.output("model", &model)?;
    manifest.output("log", &log_path)?;
    manifest.write(&dir)?;
    let last = log.last().map_or(f64::NAN, |e| e.loss);
    println!("trained MLP-{} on {} {set} items, final epoch loss {last:.4}; {}", cfg.train.mode, train_items.len(), model.display());
    Ok(())
}

pub fn eval(cfg: &PipelineConfig, set: DecoySet, split: Split, init: Option<&Path>, candidates: Option<&Path>) -> anyhow::Result<()> {
    let mut manifest = Manifest::new(&format!("eval --mode {} --decoy-set {set}", cfg.train.mode), cfg, cfg.train.seed);
    let model_path = match init {
        Some(p) => p.to_path_buf(),
        None => cfg.output().join("train").join(run_name(cfg, set)).join("model.dfmp"),
    };
    if !model_path.exists() {
        return Err(Error::Config {
            field: "init".into(),
            message: format!("no checkpoint at {}; train MLP-{} on {set} first", model_path.display(), cfg.train.mode),
        }
        .into());
    }
    manifest.input("model", &model_path)?;
    let params = read_checkpoint(&model_path)?;
    if params.mode != cfg.train.mode {
        return Err(Error::Config {
            field: "mode".into(),
            message: format!("checkpoint was trained as MLP-{}, not MLP-{}", params.mode, cfg.train.mode),
        }
        .into());
    }
    let items = in_split(&load_items(cfg, set, candidates, &mut manifest)?, split);
    let table = load_embeddings(cfg, &mut manifest)?;
    let features = model_features(cfg, &mut manifest)?;
    let accuracy = evaluate(&params, &items, cfg.metric, &features, &table)?;
    let record = EvalRecord {
        schema_version: decoyforge::SCHEMA_VERSION,
        mode: params.mode,
        decoy_set: set,
        metric: cfg.metric,
        split: split.as_str().to_string(),
        items: items.len(),
        accuracy,
        chance: chance_rate(&items),
    };
    let dir = stage_dir(cfg, &["eval", &run_name(cfg, set)])?;
    let path = dir.join("eval.json");
    write_json(&path, &record)?;
    manifest.output("eval", &path)?;
    manifest.write(&dir)?;
    println!("MLP-{} on {set} {split}: {:.4} over {} items (chance {:.4})", params.mode, accuracy, items.len(), record.chance);
    Ok(())
}

pub fn report(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let mut manifest = Manifest::new("report", cfg, cfg.seed);
    let eval_root = cfg.output().join("eval");
    let mut runs: Vec<PathBuf> = match std::fs::read_dir(&eval_root) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path().join("eval.json")))
            .filter(|p| p.exists())
            .collect(),
        Err(_) => Vec::new(),
    };
    if runs.is_empty() {
        return Err(Error::Config {
            field: "out".into(),
            message: format!("no evaluations under {}", eval_root.display()),
        }
        .into());
    }
    runs.sort();
    let mut records = Vec::with_capacity(runs.len());
    for path in &runs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let record: EvalRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let run = path.parent().and_then(Path::file_name).map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        manifest.input(&run, path)?;
        records.push(record);
    }
    let grid = Grid::build(&records);
    let text = grid.to_text();
    let dir = stage_dir(cfg, &["report"])?;
    let json_path = dir.join("report.json");
    let text_path = dir.join("report.txt");
    write_json(&json_path, &grid)?;
    std::fs::write(&text_path, &text).with_context(|| format!("writing {}", text_path.display()))?;
    manifest.output("report", &json_path)?;
    manifest.output("table", &text_path)?;
    manifest.write(&dir)?;
    print!("{text}");
    Ok(())
}
