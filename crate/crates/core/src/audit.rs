//! Answer-identity bias.
//!
//! An answer that shows up far more often as a target than as a decoy gives
//! itself away. [`BiasTable`] counts both uses per normalized answer, and
//! [`answer_prior`] turns the counts into the probability that the answer is
//! correct. Taking the candidate with the highest prior is a classifier that
//! never sees the image or the question; [`bias_rule_accuracy`] scores it.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoygen::CandidateSet;
use crate::error::{Error, Result};
use crate::text::answer_key;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerCounts {
    pub target_count: u64,
    pub decoy_count: u64,
    /// Sum over decoy occurrences of 1 / (decoys in that item).
    pub decoy_mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    /// Decoys per item; 0 for a table built from mixed decoy counts.
    pub k: usize,
    pub items: u64,
    pub answers: BTreeMap<String, AnswerCounts>,
}

impl BiasTable {
    /// A fixed-`k` table from raw counts.
    pub fn from_counts<S: AsRef<str>>(k: usize, counts: impl IntoIterator<Item = (S, u64, u64)>) -> Self {
        let mut table = BiasTable { k, ..Default::default() };
        for (answer, t, d) in counts {
            let entry = table.answers.entry(answer_key(answer.as_ref())).or_default();
            entry.target_count += t;
            entry.decoy_count += d;
            entry.decoy_mass = entry.decoy_count as f64 / k as f64;
        }
        table
    }

    pub fn get(&self, answer: &str) -> Option<&AnswerCounts> {
        self.answers.get(&answer_key(answer))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn total_targets(&self) -> u64 {
        self.answers.values().map(|c| c.target_count).sum()
    }

    pub fn total_decoys(&self) -> u64 {
        self.answers.values().map(|c| c.decoy_count).sum()
    }

    fn merge(mut self, other: Self) -> Self {
        self.items += other.items;
        for (answer, c) in other.answers {
            let entry = self.answers.entry(answer).or_default();
            entry.target_count += c.target_count;
            entry.decoy_count += c.decoy_count;
            entry.decoy_mass += c.decoy_mass;
        }
        self
    }
}

fn count_items(items: &[CandidateSet], k: usize) -> BiasTable {
    items
        .par_iter()
        .fold(
            || BiasTable { k, ..Default::default() },
            |mut table, item| {
                table.items += 1;
                table.answers.entry(answer_key(item.target())).or_default().target_count += 1;
                let weight = 1.0 / item.decoy_count().max(1) as f64;
                for (decoy, _) in item.decoys() {
                    let entry = table.answers.entry(answer_key(decoy)).or_default();
                    entry.decoy_count += 1;
                    entry.decoy_mass += weight;
                }
                table
            },
        )
        .reduce(|| BiasTable { k, ..Default::default() }, BiasTable::merge)
}

/// Counts target and decoy uses over items that all carry exactly `k` decoys.
pub fn build_bias_table(items: &[CandidateSet], k: usize) -> Result<BiasTable> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    if let Some(bad) = items.iter().find(|it| it.decoy_count() != k) {
        return Err(Error::DecoyCount {
            id: bad.triplet_id.clone(),
            expected: k,
            actual: bad.decoy_count(),
        });
    }
    let mut table = count_items(items, k);
    for c in table.answers.values_mut() {
        c.decoy_mass = c.decoy_count as f64 / k as f64;
    }
    Ok(table)
}

/// Like [`build_bias_table`] but accepts items with differing decoy counts;
/// each decoy occurrence is weighted by one over its item's decoy count.
pub fn build_bias_table_weighted(items: &[CandidateSet]) -> BiasTable {
    let first = items.first().map_or(0, CandidateSet::decoy_count);
    let uniform = items.iter().all(|it| it.decoy_count() == first);
    count_items(items, if uniform { first } else { 0 })
}

/// Probability that `candidate` is the correct answer given only its identity.
pub fn answer_prior(candidate: &str, table: &BiasTable) -> f64 {
    match table.get(candidate) {
        None => 0.5,
        Some(c) if c.target_count == 0 && c.decoy_count == 0 => 0.5,
        Some(c) => {
            let t = c.target_count as f64;
            t / (t + c.decoy_mass)
        }
    }
}

/// Index of the highest-prior candidate; the first wins ties.
pub fn bias_rule_pick(item: &CandidateSet, table: &BiasTable) -> usize {
    let mut best = 0;
    let mut best_prior = f64::NEG_INFINITY;
    for (i, c) in item.candidates.iter().enumerate() {
        let p = answer_prior(c, table);
        if p > best_prior {
            best = i;
            best_prior = p;
        }
    }
    best
}

pub fn bias_rule_accuracy(items: &[CandidateSet], table: &BiasTable) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let correct = items
        .par_iter()
        .filter(|it| !it.candidates.is_empty() && bias_rule_pick(it, table) == it.target_index)
        .count();
    correct as f64 / items.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub unique_targets: u64,
    /// Target uses per unique target.
    pub mean_target_count: f64,
    /// Decoy uses per unique target, counting only occurrences of target answers as decoys.
    pub mean_decoy_count: f64,
    /// Decoy uses per distinct decoy answer.
    pub mean_decoy_count_per_decoy: f64,
    /// Decoy slots per unique target: the decoy count each target would get if
    /// decoys were drawn uniformly from the target vocabulary.
    pub chance_decoy_count: f64,
}

pub fn frequency_stats(items: &[CandidateSet]) -> FrequencyStats {
    let table = build_bias_table_weighted(items);
    let targets: Vec<&AnswerCounts> = table.answers.values().filter(|c| c.target_count > 0).collect();
    if targets.is_empty() {
        return FrequencyStats::default();
    }
    let unique = targets.len() as f64;
    let decoy_answers = table.answers.values().filter(|c| c.decoy_count > 0).count();
    let slots = table.total_decoys() as f64;
    FrequencyStats {
        unique_targets: targets.len() as u64,
        mean_target_count: table.total_targets() as f64 / unique,
        mean_decoy_count: targets.iter().map(|c| c.decoy_count as f64).sum::<f64>() / unique,
        mean_decoy_count_per_decoy: if decoy_answers == 0 { 0.0 } else { slots / decoy_answers as f64 },
        chance_decoy_count: slots / unique,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedAnswer {
    pub answer: String,
    pub target_count: u64,
    pub decoy_count: u64,
    pub prior: f64,
}

/// Answers whose prior sits furthest from the neutral 0.5, most frequent first among equals.
pub fn most_biased(table: &BiasTable, n: usize) -> Vec<BiasedAnswer> {
    let mut rows: Vec<BiasedAnswer> = table
        .answers
        .iter()
        .map(|(answer, c)| BiasedAnswer {
            answer: answer.clone(),
            target_count: c.target_count,
            decoy_count: c.decoy_count,
            prior: answer_prior(answer, table),
        })
        .collect();
    rows.sort_by(|a, b| {
        (b.prior - 0.5)
            .abs()
            .total_cmp(&(a.prior - 0.5).abs())
            .then_with(|| (b.target_count + b.decoy_count).cmp(&(a.target_count + a.decoy_count)))
            .then_with(|| a.answer.cmp(&b.answer))
    });
    rows.truncate(n);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub stats: FrequencyStats,
    pub tie_rule: String,
    /// Rule accuracy per labelled evaluation set.
    pub rule_accuracy: BTreeMap<String, f64>,
    pub chance: BTreeMap<String, f64>,
    pub most_biased: Vec<BiasedAnswer>,
}

/// Builds the prior table from `train` and scores the rule on each evaluation set.
pub fn audit(train: &[CandidateSet], evals: &[(String, Vec<CandidateSet>)]) -> AuditReport {
    let table = build_bias_table_weighted(train);
    let mut rule_accuracy = BTreeMap::new();
    let mut chance = BTreeMap::new();
    for (label, items) in evals {
        rule_accuracy.insert(label.clone(), bias_rule_accuracy(items, &table));
        chance.insert(label.clone(), chance_rate(items));
    }
    AuditReport {
        schema_version: crate::SCHEMA_VERSION,
        stats: frequency_stats(train),
        tie_rule: "first-among-tied".into(),
        rule_accuracy,
        chance,
        most_biased: most_biased(&table, 20),
    }
}

/// Expected accuracy of a uniform random guess.
pub fn chance_rate(items: &[CandidateSet]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(|it| 1.0 / it.candidates.len().max(1) as f64).sum::<f64>() / items.len() as f64
}

/// Distinct normalized targets, for Neutrality checks.
pub fn target_vocabulary<'a>(targets: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    targets.into_iter().map(answer_key).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::decoygen::Provenance;
    use proptest::prelude::*;

    fn item(id: &str, target: &str, decoys: &[&str]) -> CandidateSet {
        let mut candidates = vec![target.to_string()];
        candidates.extend(decoys.iter().map(|d| d.to_string()));
        let mut provenance = vec![Provenance::Target];
        provenance.extend(decoys.iter().map(|_| Provenance::Orig));
        CandidateSet {
            triplet_id: id.into(),
            image_id: "img".into(),
            question: "q".into(),
            split: Split::Train,
            candidates,
            target_index: 0,
            provenance,
            human_answers: None,
        }
    }

    #[test]
    fn toy_table() {
        let items = [item("a", "cat", &["dog", "car", "red"]), item("b", "Cat", &["dog", "car", "red"])];
        let t = build_bias_table(&items, 3).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!((t.get("cat").unwrap().target_count, t.get("cat").unwrap().decoy_count), (2, 0));
        for d in ["dog", "car", "red"] {
            assert_eq!((t.get(d).unwrap().target_count, t.get(d).unwrap().decoy_count), (0, 2));
        }
        assert_eq!(t.total_targets(), 2);
        assert_eq!(t.total_decoys(), 6);
        assert!(build_bias_table(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn strict_table_rejects_wrong_decoy_count() {
        let items = [item("a", "cat", &["dog", "car", "red"]), item("b", "cat", &["dog"])];
        assert!(matches!(build_bias_table(&items, 3), Err(Error::DecoyCount { actual: 1, .. })));
    }

    #[test]
    fn prior_values() {
        let t = BiasTable::from_counts(3, [("a", 4, 0), ("b", 3, 6), ("c", 0, 5)]);
        assert_eq!(answer_prior("purple dinosaur", &t), 0.5);
        assert_eq!(answer_prior("a", &t), 1.0);
        assert!((answer_prior("b", &t) - 0.6).abs() < 1e-12);
        assert_eq!(answer_prior("c", &t), 0.0);
    }

    #[test]
    fn weighted_table_mixes_decoy_counts() {
        let items = [item("a", "cat", &["dog", "red"]), item("b", "dog", &["cat", "red", "blue", "car"])];
        let t = build_bias_table_weighted(&items);
        assert_eq!(t.k, 0);
        assert!((t.get("red").unwrap().decoy_mass - 0.75).abs() < 1e-12);
        // dog: one target use, one decoy use at weight 1/2.
        assert!((answer_prior("dog", &t) - 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn rule_breaks_ties_by_order() {
        let t = BiasTable::from_counts(1, [("x", 1, 1), ("y", 1, 1)]);
        let mut it = item("a", "x", &["y"]);
        assert_eq!(bias_rule_accuracy(std::slice::from_ref(&it), &t), 1.0);
        it.candidates.swap(0, 1);
        it.target_index = 1;
        assert_eq!(bias_rule_accuracy(&[it], &t), 0.0);
    }

    #[test]
    fn disjoint_decoys_are_always_caught() {
        let items: Vec<_> = (0..30)
            .map(|i| item(&i.to_string(), &format!("t{}", i % 7), &["d1", "d2", "d3"]))
            .collect();
        let t = build_bias_table(&items, 3).unwrap();
        assert_eq!(bias_rule_accuracy(&items, &t), 1.0);
    }

    #[test]
    fn frequency_stats_cases() {
        let items = [item("a", "cat", &["dog", "car", "red"]), item("b", "cat", &["dog", "car", "red"])];
        let s = frequency_stats(&items);
        assert_eq!(s.unique_targets, 1);
        assert_eq!(s.mean_target_count, 2.0);
        assert_eq!(s.mean_decoy_count, 0.0);
        assert_eq!(s.mean_decoy_count_per_decoy, 2.0);
        assert_eq!(s.chance_decoy_count, 6.0);
        assert_eq!(frequency_stats(&items[..1]).chance_decoy_count, 3.0);
        assert_eq!(frequency_stats(&[]), FrequencyStats::default());
    }

    #[test]
    fn most_biased_orders_by_distance_from_neutral() {
        let t = BiasTable::from_counts(3, [("even", 3, 9), ("hot", 5, 0), ("cold", 0, 9), ("warm", 2, 0)]);
        let top: Vec<_> = most_biased(&t, 3).into_iter().map(|r| r.answer).collect();
        assert_eq!(top, ["cold", "hot", "warm"]);
    }

    proptest! {
        #[test]
        fn prior_is_scale_consistent(counts in prop::collection::vec((0u64..50, 0u64..50), 1..20), k in 1usize..6, scale in 2u64..5) {
            let named: Vec<_> = counts.iter().enumerate().map(|(i, &(t, d))| (format!("a{i}"), t, d)).collect();
            let base = BiasTable::from_counts(k, named.clone());
            let scaled = BiasTable::from_counts(k, named.iter().map(|(a, t, d)| (a.clone(), t * scale, d * scale)));
            for (a, _, _) in &named {
                let (p, q) = (answer_prior(a, &base), answer_prior(a, &scaled));
                prop_assert!((p - q).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn table_totals(n in 0usize..40, k in 1usize..5) {
            let decoys: Vec<String> = (0..k).map(|j| format!("d{j}")).collect();
            let refs: Vec<&str> = decoys.iter().map(String::as_str).collect();
            let items: Vec<_> = (0..n).map(|i| item(&i.to_string(), &format!("t{}", i % 5), &refs)).collect();
            let t = build_bias_table(&items, k).unwrap();
            prop_assert_eq!(t.total_targets(), n as u64);
            prop_assert_eq!(t.total_decoys(), (k * n) as u64);
        }
    }
}
