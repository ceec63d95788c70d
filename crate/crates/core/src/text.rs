//! Text normalization, averaged word vectors, and question retrieval.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{Corpus, TripletRecord};
use crate::error::{Error, Result};

const SMALL_NUMBERS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Lowercase, split on whitespace, trim punctuation from token edges, spell out 0..=10.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let token = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if token.is_empty() {
                return None;
            }
            if token.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(n) = token.parse::<usize>() {
                    if n <= 10 {
                        return Some(SMALL_NUMBERS[n].to_string());
                    }
                }
            }
            Some(token)
        })
        .collect()
}

/// Comparison key for answers: normalized tokens joined by single spaces.
pub fn answer_key(text: &str) -> String {
    normalize(text).join(" ")
}

/// Normalized tokens with all whitespace removed ("pony tail" -> "ponytail").
pub fn compact_key(text: &str) -> String {
    normalize(text).concat()
}

/// Word -> vector lookup with a fixed dimension.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

const EMBEDDING_MAGIC: &[u8; 4] = b"DFEM";

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Inserts or replaces a word vector.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    /// Reads `word v1 ... vd` lines. A leading `count dim` header line (word2vec
    /// text style) is accepted and skipped. Repeated words keep the first vector.
    pub fn load_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if lineno == 1 && values.len() == 1 && word.parse::<usize>().is_ok() {
                if let Ok(dim) = values[0].parse::<usize>() {
                    table = Some(EmbeddingTable::new(dim));
                    continue;
                }
            }
            let vector = values
                .iter()
                .map(|v| v.parse::<f32>())
                .collect::<Result<Vec<f32>, _>>()
                .map_err(|e| Error::parse(path, lineno, format!("bad float: {e}")))?;
            if vector.is_empty() {
                return Err(Error::parse(path, lineno, "word without vector"));
            }
            let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            if vector.len() != table.dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {} values, found {}", table.dim, vector.len()),
                ));
            }
            table.vectors.entry(word.to_string()).or_insert(vector);
        }
        table.ok_or_else(|| Error::parse(path, 0, "empty embedding file"))
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for word in self.sorted_words() {
            let mut line = word.clone();
            for v in &self.vectors[word] {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Binary cache: `DFEM`, u32 dim, u32 count, then per word a u32 byte
    /// length, UTF-8 bytes, and `dim` little-endian f32 values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut buf = Vec::new();
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.vectors.len() as u32).to_le_bytes());
        for word in self.sorted_words() {
            buf.extend_from_slice(&(word.len() as u32).to_le_bytes());
            buf.extend_from_slice(word.as_bytes());
            for v in &self.vectors[word] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let mut reader = ByteReader::new(&bytes);
        if reader.take(4) != Some(EMBEDDING_MAGIC.as_slice()) {
            return Err(bad("missing DFEM magic"));
        }
        let dim = reader.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let count = reader.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let mut table = EmbeddingTable::new(dim);
        for _ in 0..count {
            let len = reader.u32().ok_or_else(|| bad("truncated entry"))? as usize;
            let word = reader
                .take(len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| bad("bad word bytes"))?
                .to_string();
            let vector = (0..dim)
                .map(|_| reader.f32())
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| bad("truncated vector"))?;
            table.vectors.insert(word, vector);
        }
        Ok(table)
    }

    fn sorted_words(&self) -> Vec<&String> {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        words
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Mean of in-vocabulary word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub values: Vec<f64>,
    pub in_vocab_count: usize,
}

impl SentenceVector {
    pub fn is_zero(&self) -> bool {
        self.in_vocab_count == 0
    }
}

/// Averages the vectors of in-vocabulary tokens; out-of-vocabulary tokens are skipped.
pub fn embed_avg<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> SentenceVector {
    let mut values = vec![0.0f64; table.dim()];
    let mut in_vocab_count = 0;
    for token in tokens {
        if let Some(v) = table.get(token.as_ref()) {
            for (acc, x) in values.iter_mut().zip(v) {
                *acc += f64::from(*x);
            }
            in_vocab_count += 1;
        }
    }
    if in_vocab_count > 0 {
        let n = in_vocab_count as f64;
        values.iter_mut().for_each(|x| *x /= n);
    }
    SentenceVector {
        values,
        in_vocab_count,
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(cosine_with_norms(u, norm(u), v, norm(v)))
}

#[inline]
fn cosine_with_norms(u: &[f64], nu: f64, v: &[f64], nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Ranked neighbour from [`QuestionIndex::topn`].
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// Position of the record in the corpus.
    pub index: usize,
    pub similarity: f64,
}

/// Precomputed question vectors for brute-force cosine retrieval.
pub struct QuestionIndex<'c> {
    corpus: &'c Corpus,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl<'c> QuestionIndex<'c> {
    pub fn new(corpus: &'c Corpus, table: &EmbeddingTable) -> Self {
        let vectors: Vec<Vec<f64>> = corpus
            .records()
            .iter()
            .map(|r| embed_avg(&normalize(&r.question), table).values)
            .collect();
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Self {
            corpus,
            vectors,
            norms,
        }
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    /// The `n` most similar questions to record `query`, excluding the record
    /// itself and every record on the same image. Sorted by descending
    /// similarity, ties by ascending triplet id.
    pub fn topn(&self, query: usize, n: usize) -> Vec<Neighbor> {
        if n == 0 || self.norms[query] == 0.0 {
            return Vec::new();
        }
        let records = self.corpus.records();
        let image = &records[query].image_id;
        let (qv, qn) = (&self.vectors[query], self.norms[query]);
        let mut hits: Vec<Neighbor> = records
            .iter()
            .enumerate()
            .filter(|(i, r)| *i != query && &r.image_id != image)
            .map(|(i, _)| Neighbor {
                index: i,
                similarity: cosine_with_norms(qv, qn, &self.vectors[i], self.norms[i]),
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| -> Ordering {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| records[a.index].id.cmp(&records[b.index].id))
        };
        if hits.len() > n {
            hits.select_nth_unstable_by(n - 1, order);
            hits.truncate(n);
        }
        hits.sort_unstable_by(order);
        hits
    }
}

/// One-shot retrieval returning `(triplet_id, similarity)` pairs.
///
/// Builds a throwaway index; use [`QuestionIndex`] for repeated queries.
pub fn topn_similar_questions(
    corpus: &Corpus,
    query: &TripletRecord,
    n: usize,
    table: &EmbeddingTable,
) -> Vec<(String, f64)> {
    let Some(position) = corpus.position(&query.id) else {
        return Vec::new();
    };
    let index = QuestionIndex::new(corpus, table);
    index
        .topn(position, n)
        .into_iter()
        .map(|hit| (corpus.records()[hit.index].id.clone(), hit.similarity))
        .collect()
}
