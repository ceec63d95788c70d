//! Pipeline configuration: a TOML file merged with command-line overrides.
//!
//! ```toml
//! seed = 7
//! metric = "plain"
//!
//! [paths]
//! corpus = "data/corpus.jsonl"
//! format = "canonical-jsonl"
//! embeddings = "data/glove.txt"
//! taxonomy = "data/wordnet"
//! taxonomy_format = "wordnet-db"
//! features = "data/features.dffs"
//! output = "runs/v7w"
//!
//! [gen]
//! k = 3
//! wup_threshold = 0.9
//!
//! [train]
//! hidden = 256
//! max_iters = 600000
//! ```
//!
//! The top-level `seed` feeds every stochastic stage unless a stage table
//! sets its own.

use std::path::{Path, PathBuf};

use anyhow::Context;
use decoyforge::corpus::CorpusFormat;
use decoyforge::model::Metric;
use decoyforge::wordnet::TaxonomyFormat;
use decoyforge::{DecoyGenConfig, Error, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    pub embeddings: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub taxonomy_format: Option<TaxonomyFormat>,
    pub features: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub metric: Metric,
    pub paths: Paths,
    pub gen: DecoyGenConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            metric: Metric::Plain,
            paths: Paths::default(),
            gen: DecoyGenConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn section<T: for<'de> Deserialize<'de> + Default>(table: &toml::Table, key: &str) -> Result<(T, bool), Error> {
    match table.get(key) {
        None => Ok((T::default(), false)),
        Some(value) => {
            let has_seed = value.as_table().is_some_and(|t| t.contains_key("seed"));
            let parsed = value.clone().try_into().map_err(|e: toml::de::Error| config_error(key, e.message().to_string()))?;
            Ok((parsed, has_seed))
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error("config", e.message().to_string()))?;
        for key in table.keys() {
            if !matches!(key.as_str(), "seed" | "metric" | "paths" | "gen" | "train") {
                return Err(config_error(key, "unknown configuration key"));
            }
        }
        let seed = match table.get("seed") {
            None => 0,
            Some(v) => v
                .as_integer()
                .and_then(|s| u64::try_from(s).ok())
                .ok_or_else(|| config_error("seed", "must be a non-negative integer"))?,
        };
        let metric = match table.get("metric") {
            None => Metric::Plain,
            Some(v) => v.as_str().ok_or_else(|| config_error("metric", "must be a string"))?.parse()?,
        };
        let (paths, _) = section::<Paths>(&table, "paths")?;
        let (mut gen, gen_seeded) = section::<DecoyGenConfig>(&table, "gen")?;
        let (mut train, train_seeded) = section::<TrainConfig>(&table, "train")?;
        if !gen_seeded {
            gen.seed = seed;
        }
        if !train_seeded {
            train.seed = seed;
        }
        Ok(Self {
            seed,
            metric,
            paths,
            gen,
            train,
        })
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Ok(Self::from_toml(&text)?)
            }
        }
    }

    /// A global seed given on the command line replaces every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gen.seed = seed;
        self.train.seed = seed;
    }

    pub fn output(&self) -> PathBuf {
        self.paths.output.clone().unwrap_or_else(|| PathBuf::from("decoyforge-out"))
    }

    pub fn corpus_format(&self) -> CorpusFormat {
        self.paths.format.unwrap_or(CorpusFormat::CanonicalJsonl)
    }

    pub fn taxonomy_format(&self) -> TaxonomyFormat {
        self.paths.taxonomy_format.unwrap_or(TaxonomyFormat::EdgeList)
    }

    /// A configured input path that must exist.
    pub fn require(&self, field: &str) -> Result<&Path, Error> {
        let path = match field {
            "corpus" => &self.paths.corpus,
            "embeddings" => &self.paths.embeddings,
            "taxonomy" => &self.paths.taxonomy,
            "features" => &self.paths.features,
            other => unreachable!("unknown path field {other}"),
        };
        let path = path
            .as_deref()
            .ok_or_else(|| config_error(&format!("paths.{field}"), "required by this command but not set"))?;
        if !path.exists() {
            return Err(config_error(&format!("paths.{field}"), format!("{} does not exist", path.display())));
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use decoyforge::model::Mode;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn sections_and_seed_propagation() {
        let cfg = PipelineConfig::from_toml(
            "seed = 5\nmetric = \"vqa-clipped\"\n[paths]\ncorpus = \"c.jsonl\"\nformat = \"v7w-style\"\n[gen]\nk = 2\n[train]\nmode = \"QA\"\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.gen.k, 2);
        assert_eq!(cfg.gen.seed, 5);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.mode, Mode::QA);
        assert_eq!(cfg.metric, Metric::VqaClipped);
        assert_eq!(cfg.corpus_format(), CorpusFormat::V7wStyle);
    }

    #[test]
    fn unknown_keys_name_their_field() {
        let err = PipelineConfig::from_toml("colour = 1").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "colour"));
        let err = PipelineConfig::from_toml("[gen]\nthreshold = 0.5").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "gen"));
    }
}
