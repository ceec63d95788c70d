//! Small self-consistent worlds for tests and benchmarks.
//!
//! Each image holds one value from every category and gets one question per
//! category. A question embeds its category word plus random filler words, so
//! it names the category but never the value. Image features are a noisy
//! multi-hot over the values present. Original decoys come from a separate
//! vocabulary that never serves as a target, which is the shortcut the
//! auditing and remediation code is meant to find and remove.
//!
//! Embedding layout, in blocks: one dimension per value, one per category,
//! then filler dimensions, then decoy-word dimensions.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Corpus, FeatureStore, Split, TripletRecord};
use crate::error::{Error, Result};
use crate::text::EmbeddingTable;
use crate::wordnet::{Pos, Taxonomy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub categories: usize,
    pub values_per_category: usize,
    pub images: usize,
    pub filler_words: usize,
    pub filler_dims: usize,
    pub fillers_per_question: usize,
    pub decoy_words: usize,
    pub decoy_dims: usize,
    /// Original (biased) decoys per record.
    pub orig_decoys: usize,
    /// Standard deviation of the Gaussian noise added to image features.
    pub image_noise: f64,
    /// Extra pure-noise image dimensions.
    pub image_extra_dims: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            categories: 6,
            values_per_category: 6,
            images: 200,
            filler_words: 24,
            filler_dims: 8,
            fillers_per_question: 2,
            decoy_words: 30,
            decoy_dims: 8,
            orig_decoys: 3,
            image_noise: 0.1,
            image_extra_dims: 4,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn with_images(images: usize, seed: u64) -> Self {
        Self { images, seed, ..Default::default() }
    }

    pub fn d_txt(&self) -> usize {
        self.categories * self.values_per_category + self.categories + self.filler_dims + self.decoy_dims
    }

    pub fn d_img(&self) -> usize {
        self.categories * self.values_per_category + self.image_extra_dims
    }
}

pub struct World {
    pub config: WorldConfig,
    pub corpus: Corpus,
    pub table: EmbeddingTable,
    pub taxonomy: Taxonomy,
    pub features: FeatureStore,
    /// Value words, grouped by category.
    pub values: Vec<Vec<String>>,
    pub category_words: Vec<String>,
    pub decoy_vocabulary: Vec<String>,
    taxonomy_rows: Vec<String>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Distinct three-syllable words. Equal length means no word contains another.
fn word_pool(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut all = Vec::with_capacity(ONSETS.len().pow(3) * VOWELS.len().pow(3));
    for a in ONSETS {
        for x in VOWELS {
            for b in ONSETS {
                for y in VOWELS {
                    for c in ONSETS {
                        for z in VOWELS {
                            all.push(format!("{a}{x}{b}{y}{c}{z}"));
                        }
                    }
                }
            }
        }
    }
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl World {
    pub fn build(cfg: &WorldConfig) -> Result<Self> {
        if cfg.categories < 2 || cfg.values_per_category < 2 || cfg.images == 0 {
            return Err(Error::config("world", "need at least 2 categories, 2 values each, and 1 image"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nv = cfg.categories * cfg.values_per_category;
        let words = word_pool(nv + cfg.categories + cfg.filler_words + cfg.decoy_words, &mut rng);
        let mut it = words.into_iter();
        let values: Vec<Vec<String>> = (0..cfg.categories)
            .map(|_| it.by_ref().take(cfg.values_per_category).collect())
            .collect();
        let category_words: Vec<String> = it.by_ref().take(cfg.categories).collect();
        let fillers: Vec<String> = it.by_ref().take(cfg.filler_words).collect();
        let decoy_vocabulary: Vec<String> = it.by_ref().take(cfg.decoy_words).collect();

        let d_txt = cfg.d_txt();
        let (cat_off, fill_off, decoy_off) = (nv, nv + cfg.categories, nv + cfg.categories + cfg.filler_dims);
        let mut table = EmbeddingTable::new(d_txt);
        for (c, group) in values.iter().enumerate() {
            for (j, w) in group.iter().enumerate() {
                let mut v = vec![0.0f32; d_txt];
                v[c * cfg.values_per_category + j] = 1.0;
                v[cat_off + c] = 1.0;
                table.insert(w.clone(), v)?;
            }
        }
        for (c, w) in category_words.iter().enumerate() {
            let mut v = vec![0.0f32; d_txt];
            v[cat_off + c] = 3.0;
            table.insert(w.clone(), v)?;
        }
        for w in &fillers {
            let mut v = vec![0.0f32; d_txt];
            for x in &mut v[fill_off..fill_off + cfg.filler_dims] {
                *x = gaussian(&mut rng) as f32;
            }
            table.insert(w.clone(), v)?;
        }
        for w in &decoy_vocabulary {
            let mut v = vec![0.0f32; d_txt];
            for x in &mut v[decoy_off..decoy_off + cfg.decoy_dims] {
                *x = gaussian(&mut rng).abs() as f32 + 0.1;
            }
            table.insert(w.clone(), v)?;
        }

        let mut rows = Vec::new();
        for (c, group) in values.iter().enumerate() {
            rows.push(format!("cat{c}\tNOUN\t{}\t", category_words[c]));
            for (j, w) in group.iter().enumerate() {
                rows.push(format!("cat{c}.v{j}\tNOUN\t{w}\tcat{c}"));
            }
        }
        let taxonomy = Taxonomy::from_rows(rows.iter().map(|r| {
            let f: Vec<&str> = r.split('\t').collect();
            let parents = if f[3].is_empty() { vec![] } else { vec![f[3].to_string()] };
            (f[0].to_string(), Pos::Noun, vec![f[2].to_string()], parents)
        }))?;

        let d_img = cfg.d_img();
        let mut features = FeatureStore::new(d_img);
        let mut records = Vec::with_capacity(cfg.images * cfg.categories);
        let n_train = ((cfg.images as f64) * cfg.train_fraction).round() as usize;
        for img in 0..cfg.images {
            let image_id = format!("img{img:05}");
            let split = if img < n_train { Split::Train } else { Split::Test };
            let mut feat = vec![0.0f32; d_img];
            let mut present = Vec::with_capacity(cfg.categories);
            for c in 0..cfg.categories {
                let j = rng.gen_range(0..cfg.values_per_category);
                feat[c * cfg.values_per_category + j] = 1.0;
                present.push(j);
            }
            for x in &mut feat {
                *x += (cfg.image_noise * gaussian(&mut rng)) as f32;
            }
            features.insert(image_id.clone(), feat)?;
            for (c, &j) in present.iter().enumerate() {
                let mut question = vec![category_words[c].as_str()];
                for _ in 0..cfg.fillers_per_question {
                    question.push(&fillers[rng.gen_range(0..fillers.len())]);
                }
                let decoys: Vec<String> = decoy_vocabulary
                    .choose_multiple(&mut rng, cfg.orig_decoys.min(decoy_vocabulary.len()))
                    .cloned()
                    .collect();
                let mut record = TripletRecord::new(
                    format!("t{img:05}-{c}"),
                    image_id.clone(),
                    split,
                    question.join(" "),
                    values[c][j].clone(),
                )
                .with_decoys(decoys);
                record.qtype = Some(format!("cat{c}"));
                records.push(record);
            }
        }
        Ok(Self {
            config: cfg.clone(),
            corpus: Corpus::new(records)?,
            table,
            taxonomy,
            features,
            values,
            category_words,
            decoy_vocabulary,
            taxonomy_rows: rows,
        })
    }

    pub fn taxonomy_edge_list(&self) -> String {
        let mut out = String::from("# synset\tpos\tlemmas\tparents\n");
        for r in &self.taxonomy_rows {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    /// Writes corpus, embeddings, taxonomy, and features into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<WorldFiles> {
        let files = WorldFiles {
            corpus: dir.join("corpus.jsonl"),
            embeddings: dir.join("embeddings.txt"),
            taxonomy: dir.join("taxonomy.tsv"),
            features: dir.join("features.dffs"),
        };
        write_corpus(&self.corpus, &files.corpus)?;
        self.table.write_text(&files.embeddings)?;
        std::fs::write(&files.taxonomy, self.taxonomy_edge_list()).map_err(|e| Error::io(&files.taxonomy, e))?;
        self.features.write(&files.features)?;
        Ok(files)
    }
}

#[derive(Debug, Clone)]
pub struct WorldFiles {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub taxonomy: PathBuf,
    pub features: PathBuf,
}
