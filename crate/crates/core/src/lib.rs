//! Shortcut-bias auditing and decoy regeneration for multiple-choice visual QA.
//!
//! The crate is organised around the pipeline a dataset passes through:
//!
//! * [`corpus`] loads triplet corpora and image feature stores.
//! * [`text`] normalizes text, averages word vectors, and retrieves similar questions.
//! * [`wordnet`] parses a hypernym taxonomy and computes Wu-Palmer similarity.
//! * [`decoygen`] builds question-grounded (QoU) and image-grounded (IoU) decoys.
//! * [`audit`] measures how much answer identity alone gives away.
//! * [`model`] trains and evaluates the one-hidden-layer answer scorer.
//!
//! [`synthetic`] builds small self-consistent worlds (corpus, embeddings,
//! taxonomy, image features) used by tests and benchmarks.

pub mod audit;
pub mod corpus;
pub mod decoygen;
pub mod error;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod text;
pub mod wordnet;

pub use audit::{BiasTable, FrequencyStats};
pub use corpus::{Corpus, FeatureStore, Split, TripletRecord};
pub use decoygen::{CandidateSet, DecoyGenConfig, DecoySet, FallbackPool, GenerationReport, Provenance};
pub use error::{Error, Result};
pub use model::{MlpParams, Mode, TrainConfig};
pub use text::{EmbeddingTable, SentenceVector};
pub use wordnet::{Taxonomy, WupCache};

/// Version stamped into every JSON report this crate emits.
pub const SCHEMA_VERSION: u32 = 1;
