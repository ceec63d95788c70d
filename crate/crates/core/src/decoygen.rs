//! Decoy regeneration.
//!
//! QoU decoys are targets of the most similar questions asked about other
//! images; IoU decoys are targets of the other questions about the same
//! image. Both lists pass a containment filter and a Wu-Palmer threshold, both
//! against the target and against decoys already accepted. Shortfalls are
//! topped up from a fallback pool, and [`DecoyGenerator::assemble`] merges the
//! lists into a candidate set for one of the five [`DecoySet`]s.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Corpus, Split, TripletRecord};
use crate::error::{Error, Result};
use crate::rng::{record_rng, Stream};
use crate::text::{answer_key, compact_key, normalize, EmbeddingTable, QuestionIndex};
use crate::wordnet::{wup_sequence, Taxonomy, WordSimilarity, WupCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPool {
    /// The record's own original decoys.
    OrigDecoys,
    /// The ten most frequent targets in the corpus.
    FrequentTargets,
}

impl FromStr for FallbackPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orig-decoys" | "orig" => Ok(Self::OrigDecoys),
            "frequent-targets" | "frequent" => Ok(Self::FrequentTargets),
            other => Err(Error::config("fallback", format!("unknown fallback pool `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoyGenConfig {
    /// Decoys per procedure.
    pub k: usize,
    /// How many similar questions QoU may walk through.
    pub topn: usize,
    pub wup_threshold: f64,
    pub seed: u64,
    pub fallback: FallbackPool,
}

impl Default for DecoyGenConfig {
    fn default() -> Self {
        Self {
            k: 3,
            topn: 10_000,
            wup_threshold: 0.9,
            seed: 0,
            fallback: FallbackPool::FrequentTargets,
        }
    }
}

impl DecoyGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wup_threshold > 0.0 && self.wup_threshold <= 1.0) {
            return Err(Error::config("threshold", format!("must lie in (0, 1], got {}", self.wup_threshold)));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.topn < self.k {
            return Err(Error::config("topn", format!("must be at least k = {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Target,
    Orig,
    Qou,
    Iou,
    Fallback,
}

/// The five candidate-set layouts compared in the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecoySet {
    #[serde(rename = "orig")]
    Orig,
    #[serde(rename = "iou")]
    Iou,
    #[serde(rename = "qou")]
    Qou,
    #[serde(rename = "iou+qou")]
    IouQou,
    #[serde(rename = "all")]
    All,
}

impl DecoySet {
    pub const ALL: [DecoySet; 5] = [DecoySet::Orig, DecoySet::Iou, DecoySet::Qou, DecoySet::IouQou, DecoySet::All];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoySet::Orig => "orig",
            DecoySet::Iou => "iou",
            DecoySet::Qou => "qou",
            DecoySet::IouQou => "iou+qou",
            DecoySet::All => "all",
        }
    }

    pub fn uses_orig(self) -> bool {
        matches!(self, DecoySet::Orig | DecoySet::All)
    }

    pub fn uses_iou(self) -> bool {
        matches!(self, DecoySet::Iou | DecoySet::IouQou | DecoySet::All)
    }

    pub fn uses_qou(self) -> bool {
        matches!(self, DecoySet::Qou | DecoySet::IouQou | DecoySet::All)
    }

    /// Number of decoys a complete set carries.
    pub fn decoy_count(self, k: usize, orig: usize) -> usize {
        match self {
            DecoySet::Orig => orig,
            DecoySet::Iou | DecoySet::Qou => k,
            DecoySet::IouQou => 2 * k,
            DecoySet::All => orig + 2 * k,
        }
    }
}

impl fmt::Display for DecoySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orig" => Ok(DecoySet::Orig),
            "iou" => Ok(DecoySet::Iou),
            "qou" => Ok(DecoySet::Qou),
            "iou+qou" | "qou+iou" => Ok(DecoySet::IouQou),
            "all" => Ok(DecoySet::All),
            other => Err(Error::config("mode", format!("unknown decoy set `{other}`"))),
        }
    }
}

/// A multiple-choice item: the target hidden among its decoys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    #[serde(rename = "id")]
    pub triplet_id: String,
    pub image_id: String,
    pub question: String,
    pub split: Split,
    pub candidates: Vec<String>,
    pub target_index: usize,
    pub provenance: Vec<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_answers: Option<Vec<String>>,
}

impl CandidateSet {
    pub fn target(&self) -> &str {
        &self.candidates[self.target_index]
    }

    pub fn decoy_count(&self) -> usize {
        self.candidates.len().saturating_sub(1)
    }

    /// Decoy texts in candidate order.
    pub fn decoys(&self) -> impl Iterator<Item = (&str, Provenance)> {
        self.candidates
            .iter()
            .zip(&self.provenance)
            .enumerate()
            .filter(move |(i, _)| *i != self.target_index)
            .map(|(_, (c, p))| (c.as_str(), *p))
    }

    /// Candidate set over the record's original decoys, without any filtering.
    /// The target goes first.
    pub fn from_original(record: &TripletRecord) -> Self {
        let mut candidates = vec![record.target.clone()];
        candidates.extend(record.decoys.iter().cloned());
        let mut provenance = vec![Provenance::Target];
        provenance.extend(std::iter::repeat_n(Provenance::Orig, record.decoys.len()));
        Self {
            triplet_id: record.id.clone(),
            image_id: record.image_id.clone(),
            question: record.question.clone(),
            split: record.split,
            candidates,
            target_index: 0,
            provenance,
            human_answers: record.human_answers.clone(),
        }
    }
}

pub fn write_candidates(path: &Path, sets: &[CandidateSet]) -> Result<()> {
    write_jsonl(path, sets)
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateSet>> {
    read_jsonl(path)
}

/// Canonical JSONL bytes of a candidate corpus.
pub fn candidates_to_jsonl(sets: &[CandidateSet]) -> Vec<u8> {
    let mut out = Vec::new();
    for set in sets {
        serde_json::to_writer(&mut out, set).expect("candidate sets serialize");
        out.push(b'\n');
    }
    out
}

/// True when, after normalization and whitespace removal, either text contains the other.
pub fn string_filter(target: &str, candidate: &str) -> bool {
    let (t, c) = (compact_key(target), compact_key(candidate));
    t.contains(&c) || c.contains(&t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ambiguity {
    Containment,
    Similarity,
}

fn ambiguity<S: WordSimilarity + ?Sized>(reference: &str, candidate: &str, sim: &S, threshold: f64) -> Option<Ambiguity> {
    if string_filter(reference, candidate) {
        return Some(Ambiguity::Containment);
    }
    if wup_sequence(&normalize(reference), &normalize(candidate), sim) >= threshold {
        return Some(Ambiguity::Similarity);
    }
    None
}

pub fn is_ambiguous<S: WordSimilarity + ?Sized>(target: &str, candidate: &str, sim: &S, threshold: f64) -> bool {
    ambiguity(target, candidate, sim, threshold).is_some()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub contains_target: u64,
    pub similar_to_target: u64,
    pub contains_accepted: u64,
    pub similar_to_accepted: u64,
}

impl RejectionCounts {
    pub fn total(&self) -> u64 {
        self.contains_target + self.similar_to_target + self.contains_accepted + self.similar_to_accepted
    }

    fn add(&mut self, other: &Self) {
        self.contains_target += other.contains_target;
        self.similar_to_target += other.similar_to_target;
        self.contains_accepted += other.contains_accepted;
        self.similar_to_accepted += other.similar_to_accepted;
    }
}

/// Per-procedure tallies for one record or a whole corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcedureStats {
    pub examined: u64,
    pub accepted: u64,
    pub rejected: RejectionCounts,
    /// Records where the procedure found fewer than `k` decoys.
    pub shortfall_records: u64,
    pub filled_from_pool: u64,
    pub filled_from_global: u64,
}

impl ProcedureStats {
    fn add(&mut self, other: &Self) {
        self.examined += other.examined;
        self.accepted += other.accepted;
        self.rejected.add(&other.rejected);
        self.shortfall_records += other.shortfall_records;
        self.filled_from_pool += other.filled_from_pool;
        self.filled_from_global += other.filled_from_global;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub duplicates_removed: u64,
    pub refilled_from_pool: u64,
    pub refilled_from_global: u64,
    /// Slots left empty because even the global vocabulary ran out.
    pub unfilled_slots: u64,
}

impl AssemblyStats {
    fn add(&mut self, other: &Self) {
        self.duplicates_removed += other.duplicates_removed;
        self.refilled_from_pool += other.refilled_from_pool;
        self.refilled_from_global += other.refilled_from_global;
        self.unfilled_slots += other.unfilled_slots;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureReport {
    #[serde(flatten)]
    pub stats: ProcedureStats,
    pub shortfall_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub schema_version: u32,
    pub mode: DecoySet,
    pub records: u64,
    pub config: DecoyGenConfig,
    pub qou: ProcedureReport,
    pub iou: ProcedureReport,
    pub assembly: AssemblyStats,
}

/// Where a decoy came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoy {
    pub text: String,
    pub provenance: Provenance,
    /// Drawn from the whole target vocabulary after the fallback pool ran dry.
    pub global: bool,
}

impl Decoy {
    fn new(text: &str, provenance: Provenance) -> Self {
        Self {
            text: text.to_string(),
            provenance,
            global: false,
        }
    }
}

/// Shared state for generating decoys over one corpus.
pub struct DecoyGenerator<'a> {
    corpus: &'a Corpus,
    index: QuestionIndex<'a>,
    wup: WupCache<'a>,
    cfg: DecoyGenConfig,
    frequent_targets: Vec<String>,
    /// Distinct targets (first surface form per normalized key), corpus order.
    vocabulary: Vec<String>,
}

impl<'a> DecoyGenerator<'a> {
    pub fn new(corpus: &'a Corpus, table: &EmbeddingTable, taxonomy: &'a Taxonomy, cfg: DecoyGenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut vocabulary = Vec::new();
        for (i, r) in corpus.records().iter().enumerate() {
            let key = answer_key(&r.target);
            if key.is_empty() {
                continue;
            }
            let entry = counts.entry(key).or_insert_with(|| {
                vocabulary.push(r.target.clone());
                (0, i)
            });
            entry.0 += 1;
        }
        let mut ranked: Vec<(&String, &(usize, usize))> = counts.iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(b.0)));
        let frequent_targets = ranked
            .into_iter()
            .take(10)
            .map(|(_, &(_, first))| corpus.records()[first].target.clone())
            .collect();
        Ok(Self {
            corpus,
            index: QuestionIndex::new(corpus, table),
            wup: WupCache::new(taxonomy, WupCache::DEFAULT_CAPACITY),
            cfg,
            frequent_targets,
            vocabulary,
        })
    }

    pub fn config(&self) -> &DecoyGenConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn frequent_targets(&self) -> &[String] {
        &self.frequent_targets
    }

    pub fn wup(&self) -> &WupCache<'a> {
        &self.wup
    }

    /// Checks one candidate against the target and the decoys kept so far.
    fn offer(&self, target: &str, candidate: &str, accepted: &mut Vec<String>, stats: &mut ProcedureStats) {
        let threshold = self.cfg.wup_threshold;
        stats.examined += 1;
        match ambiguity(target, candidate, &self.wup, threshold) {
            Some(Ambiguity::Containment) => stats.rejected.contains_target += 1,
            Some(Ambiguity::Similarity) => stats.rejected.similar_to_target += 1,
            None => match accepted.iter().find_map(|a| ambiguity(a, candidate, &self.wup, threshold)) {
                Some(Ambiguity::Containment) => stats.rejected.contains_accepted += 1,
                Some(Ambiguity::Similarity) => stats.rejected.similar_to_accepted += 1,
                None => {
                    stats.accepted += 1;
                    accepted.push(candidate.to_string());
                }
            },
        }
    }

    /// Walks candidates in order, keeping those unambiguous with the target
    /// and with every decoy kept so far, until `k` are kept.
    fn select<'s>(&self, target: &str, candidates: impl Iterator<Item = &'s str>, stats: &mut ProcedureStats) -> Vec<String> {
        let mut accepted: Vec<String> = Vec::with_capacity(self.cfg.k);
        for candidate in candidates {
            if accepted.len() == self.cfg.k {
                break;
            }
            self.offer(target, candidate, &mut accepted, stats);
        }
        if accepted.len() < self.cfg.k {
            stats.shortfall_records += 1;
        }
        accepted
    }

    /// Targets of similar questions on other images.
    ///
    /// The ranking is fetched in growing prefixes up to `topn`, so a record
    /// that fills its `k` slots early never pays for the full sort.
    pub fn qou_decoys(&self, record: usize, stats: &mut ProcedureStats) -> Vec<String> {
        let records = self.corpus.records();
        let target = &records[record].target;
        let mut accepted: Vec<String> = Vec::with_capacity(self.cfg.k);
        let (mut fetch, mut walked) = ((8 * self.cfg.k).max(32).min(self.cfg.topn), 0);
        loop {
            let hits = self.index.topn(record, fetch);
            for h in &hits[walked..] {
                if accepted.len() == self.cfg.k {
                    break;
                }
                self.offer(target, &records[h.index].target, &mut accepted, stats);
                walked += 1;
            }
            if accepted.len() == self.cfg.k || hits.len() < fetch || fetch == self.cfg.topn {
                break;
            }
            fetch = (fetch * 8).min(self.cfg.topn);
        }
        if accepted.len() < self.cfg.k {
            stats.shortfall_records += 1;
        }
        accepted
    }

    /// Targets of the other questions about the same image, in seeded random order.
    pub fn iou_decoys(&self, record: usize, stats: &mut ProcedureStats) -> Vec<String> {
        let records = self.corpus.records();
        let me = &records[record];
        let mut pool: Vec<&str> = self
            .corpus
            .image_records(&me.image_id)
            .iter()
            .filter(|&&i| i != record)
            .map(|&i| records[i].target.as_str())
            .collect();
        pool.shuffle(&mut record_rng(self.cfg.seed, &me.id, Stream::IouOrder));
        self.select(&me.target, pool.into_iter(), stats)
    }

    fn admissible(&self, target: &str, current: &[Decoy], exclude: &HashSet<String>, candidate: &str) -> bool {
        let key = answer_key(candidate);
        if key.is_empty() || exclude.contains(&key) || current.iter().any(|d| answer_key(&d.text) == key) {
            return false;
        }
        let threshold = self.cfg.wup_threshold;
        !is_ambiguous(target, candidate, &self.wup, threshold)
            && !current.iter().any(|d| is_ambiguous(&d.text, candidate, &self.wup, threshold))
    }

    /// Appends fallback decoys until `current` holds `want` entries: first from
    /// the configured pool, then from the whole target vocabulary. `exclude`
    /// holds normalized keys that may not be drawn. Returns the shortfall left.
    fn top_up(&self, record: usize, current: &mut Vec<Decoy>, want: usize, exclude: &HashSet<String>, round: u8) -> (u64, u64, u64) {
        let me = &self.corpus.records()[record];
        let mut rng = record_rng(self.cfg.seed, &me.id, Stream::Fallback(round));
        let (mut from_pool, mut from_global) = (0, 0);
        if current.len() < want {
            let mut pool: Vec<&str> = match self.cfg.fallback {
                FallbackPool::OrigDecoys => me.decoys.iter().map(String::as_str).collect(),
                FallbackPool::FrequentTargets => self.frequent_targets.iter().map(String::as_str).collect(),
            };
            pool.shuffle(&mut rng);
            for candidate in pool {
                if current.len() == want {
                    break;
                }
                if self.admissible(&me.target, current, exclude, candidate) {
                    current.push(Decoy::new(candidate, Provenance::Fallback));
                    from_pool += 1;
                }
            }
        }
        if current.len() < want && !self.vocabulary.is_empty() {
            let n = self.vocabulary.len();
            // Random probes first, then a cyclic sweep so exhaustion is detected.
            let mut take = |candidate: &str, current: &mut Vec<Decoy>| {
                if self.admissible(&me.target, current, exclude, candidate) {
                    current.push(Decoy {
                        text: candidate.to_string(),
                        provenance: Provenance::Fallback,
                        global: true,
                    });
                    from_global += 1;
                }
            };
            for _ in 0..(4 * want).min(4 * n) {
                if current.len() == want {
                    break;
                }
                let i = rng.gen_range(0..n);
                take(&self.vocabulary[i], current);
            }
            let start = rng.gen_range(0..n);
            for step in 0..n {
                if current.len() == want {
                    break;
                }
                take(&self.vocabulary[(start + step) % n], current);
            }
        }
        let missing = want.saturating_sub(current.len()) as u64;
        (from_pool, from_global, missing)
    }

    /// Pads a procedure's decoys to exactly `k` with fallback picks.
    pub fn fill_fallback(&self, record: usize, partial: Vec<Decoy>, stats: &mut ProcedureStats, round: u8) -> Vec<Decoy> {
        let mut current = partial;
        let (pool, global, _) = self.top_up(record, &mut current, self.cfg.k, &HashSet::new(), round);
        stats.filled_from_pool += pool;
        stats.filled_from_global += global;
        current
    }

    /// Merges decoy lists into the layout of `mode`, removing cross-source
    /// duplicates (priority target > orig > iou > qou), refilling to the exact
    /// count, and placing the target at a seeded random slot.
    pub fn assemble(&self, record: usize, qou: &[Decoy], iou: &[Decoy], mode: DecoySet, stats: &mut AssemblyStats) -> Result<CandidateSet> {
        let me = &self.corpus.records()[record];
        if mode == DecoySet::Orig && me.decoys.is_empty() {
            return Err(Error::NoOriginalDecoys(me.id.clone()));
        }
        let orig: Vec<Decoy> = me.decoys.iter().map(|d| Decoy::new(d, Provenance::Orig)).collect();
        let mut sources: Vec<&[Decoy]> = Vec::new();
        if mode.uses_orig() {
            sources.push(&orig);
        }
        if mode.uses_iou() {
            sources.push(iou);
        }
        if mode.uses_qou() {
            sources.push(qou);
        }
        let want = mode.decoy_count(self.cfg.k, me.decoys.len());
        let mut seen: HashSet<String> = HashSet::from([answer_key(&me.target)]);
        let mut decoys: Vec<Decoy> = Vec::with_capacity(want);
        for d in sources.into_iter().flatten() {
            let key = answer_key(&d.text);
            if key.is_empty() || !seen.insert(key) {
                stats.duplicates_removed += 1;
                continue;
            }
            decoys.push(d.clone());
        }
        decoys.truncate(want);
        if decoys.len() < want {
            let (pool, global, missing) = self.top_up(record, &mut decoys, want, &seen, 2);
            stats.refilled_from_pool += pool;
            stats.refilled_from_global += global;
            stats.unfilled_slots += missing;
        }
        let slot = record_rng(self.cfg.seed, &me.id, Stream::TargetSlot).gen_range(0..=decoys.len());
        let mut candidates: Vec<String> = decoys.iter().map(|d| d.text.clone()).collect();
        let mut provenance: Vec<Provenance> = decoys.iter().map(|d| d.provenance).collect();
        candidates.insert(slot, me.target.clone());
        provenance.insert(slot, Provenance::Target);
        Ok(CandidateSet {
            triplet_id: me.id.clone(),
            image_id: me.image_id.clone(),
            question: me.question.clone(),
            split: me.split,
            candidates,
            target_index: slot,
            provenance,
            human_answers: me.human_answers.clone(),
        })
    }

    /// Full pipeline for one record.
    pub fn generate(&self, record: usize, mode: DecoySet) -> Result<(CandidateSet, RecordStats)> {
        let mut stats = RecordStats::default();
        let wrap = |v: Vec<String>, p| v.iter().map(|t| Decoy::new(t, p)).collect::<Vec<_>>();
        let qou = if mode.uses_qou() {
            let found = wrap(self.qou_decoys(record, &mut stats.qou), Provenance::Qou);
            self.fill_fallback(record, found, &mut stats.qou, 0)
        } else {
            Vec::new()
        };
        let iou = if mode.uses_iou() {
            let found = wrap(self.iou_decoys(record, &mut stats.iou), Provenance::Iou);
            self.fill_fallback(record, found, &mut stats.iou, 1)
        } else {
            Vec::new()
        };
        let set = self.assemble(record, &qou, &iou, mode, &mut stats.assembly)?;
        Ok((set, stats))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RecordStats {
    pub qou: ProcedureStats,
    pub iou: ProcedureStats,
    pub assembly: AssemblyStats,
}

/// Regenerates decoys for every record, in corpus order.
pub fn remediate_corpus(
    corpus: &Corpus,
    table: &EmbeddingTable,
    taxonomy: &Taxonomy,
    cfg: &DecoyGenConfig,
    mode: DecoySet,
) -> Result<(Vec<CandidateSet>, GenerationReport)> {
    let generator = DecoyGenerator::new(corpus, table, taxonomy, cfg.clone())?;
    remediate_with(&generator, mode)
}

pub fn remediate_with(generator: &DecoyGenerator<'_>, mode: DecoySet) -> Result<(Vec<CandidateSet>, GenerationReport)> {
    let results: Vec<(CandidateSet, RecordStats)> = (0..generator.corpus().len())
        .into_par_iter()
        .map(|i| generator.generate(i, mode))
        .collect::<Result<_>>()?;
    let mut total = RecordStats::default();
    let mut sets = Vec::with_capacity(results.len());
    for (set, stats) in results {
        total.qou.add(&stats.qou);
        total.iou.add(&stats.iou);
        total.assembly.add(&stats.assembly);
        sets.push(set);
    }
    let records = sets.len() as u64;
    let rate = |s: &ProcedureStats, used: bool| {
        if used && records > 0 {
            s.shortfall_records as f64 / records as f64
        } else {
            0.0
        }
    };
    let report = GenerationReport {
        schema_version: crate::SCHEMA_VERSION,
        mode,
        records,
        config: generator.config().clone(),
        qou: ProcedureReport {
            shortfall_rate: rate(&total.qou, mode.uses_qou()),
            stats: total.qou,
        },
        iou: ProcedureReport {
            shortfall_rate: rate(&total.iou, mode.uses_iou()),
            stats: total.iou,
        },
        assembly: total.assembly,
    };
    Ok((sets, report))
}

/// Convenience wrappers with one-shot generators, mirroring the per-record operations.
pub fn gen_qou_decoys(record: &TripletRecord, corpus: &Corpus, table: &EmbeddingTable, taxonomy: &Taxonomy, cfg: &DecoyGenConfig) -> Result<Vec<String>> {
    let generator = DecoyGenerator::new(corpus, table, taxonomy, cfg.clone())?;
    let i = corpus.position(&record.id).ok_or_else(|| Error::config("record", format!("`{}` not in corpus", record.id)))?;
    Ok(generator.qou_decoys(i, &mut ProcedureStats::default()))
}

pub fn gen_iou_decoys(record: &TripletRecord, corpus: &Corpus, taxonomy: &Taxonomy, cfg: &DecoyGenConfig) -> Result<Vec<String>> {
    let table = EmbeddingTable::new(1);
    let generator = DecoyGenerator::new(corpus, &table, taxonomy, cfg.clone())?;
    let i = corpus.position(&record.id).ok_or_else(|| Error::config("record", format!("`{}` not in corpus", record.id)))?;
    Ok(generator.iou_decoys(i, &mut ProcedureStats::default()))
}
