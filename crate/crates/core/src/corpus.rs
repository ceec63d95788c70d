//! Triplet corpora and image feature stores.
//!
//! Everything downstream works on the canonical JSONL layout, one record per
//! line:
//!
//! ```text
//! {"id":"t1","image_id":"img1","split":"train","question":"What is it?",
//!  "target":"a cat","decoys":["a dog"],"qtype":"what","human_answers":[...]}
//! ```
//!
//! `qtype` and `human_answers` are optional. Two dataset-native layouts are
//! converted on load (see [`CorpusFormat`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::text::{answer_key, ByteReader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    /// Accepts plain labels plus the COCO-style subtypes used by VQA (`train2014`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let stem = lower.trim_end_matches(|c: char| c.is_ascii_digit());
        match stem {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" | "test-dev" => Ok(Split::Test),
            _ => Err(Error::UnknownSplit(s.to_string())),
        }
    }
}

/// One image-question-target sample with any original decoys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub image_id: String,
    pub split: Split,
    pub question: String,
    pub target: String,
    #[serde(default)]
    pub decoys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<String>,
    /// Free-form human answers, only consulted by the clipped VQA metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_answers: Option<Vec<String>>,
}

impl TripletRecord {
    pub fn new(
        id: impl Into<String>,
        image_id: impl Into<String>,
        split: Split,
        question: impl Into<String>,
        target: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            image_id: image_id.into(),
            split,
            question: question.into(),
            target: target.into(),
            decoys: Vec::new(),
            qtype: None,
            human_answers: None,
        }
    }

    pub fn with_decoys<S: Into<String>>(mut self, decoys: impl IntoIterator<Item = S>) -> Self {
        self.decoys = decoys.into_iter().map(Into::into).collect();
        self
    }
}

/// Records plus the image grouping used by IoU generation.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<TripletRecord>,
    positions: HashMap<String, usize>,
    image_index: BTreeMap<String, Vec<usize>>,
    split_counts: BTreeMap<Split, usize>,
}

impl Corpus {
    /// Fails on duplicate triplet ids. Input order is preserved.
    pub fn new(records: Vec<TripletRecord>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(records.len());
        let mut image_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut split_counts = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if positions.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            image_index.entry(r.image_id.clone()).or_default().push(i);
            *split_counts.entry(r.split).or_insert(0) += 1;
        }
        Ok(Self {
            records,
            positions,
            image_index,
            split_counts,
        })
    }

    pub fn records(&self) -> &[TripletRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, triplet_id: &str) -> Option<usize> {
        self.positions.get(triplet_id).copied()
    }

    pub fn get(&self, triplet_id: &str) -> Option<&TripletRecord> {
        self.position(triplet_id).map(|i| &self.records[i])
    }

    /// Record positions per image, in corpus order.
    pub fn image_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.image_index
    }

    pub fn image_records(&self, image_id: &str) -> &[usize] {
        self.image_index.get(image_id).map_or(&[], Vec::as_slice)
    }

    pub fn image_triplet_ids(&self, image_id: &str) -> Vec<&str> {
        self.image_records(image_id)
            .iter()
            .map(|&i| self.records[i].id.as_str())
            .collect()
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split_counts.get(&split).copied().unwrap_or(0)
    }

    pub fn split_counts(&self) -> &BTreeMap<Split, usize> {
        &self.split_counts
    }

    pub fn into_records(self) -> Vec<TripletRecord> {
        self.records
    }
}

/// Records of one split, in corpus order.
pub fn split_view(corpus: &Corpus, split: Split) -> Vec<&TripletRecord> {
    corpus.records().iter().filter(|r| r.split == split).collect()
}

pub fn is_yes_no(answer: &str) -> bool {
    matches!(answer_key(answer).as_str(), "yes" | "no")
}

/// Drops records whose normalized target is `yes` or `no`.
pub fn filter_yes_no(corpus: &Corpus) -> Corpus {
    let kept = corpus
        .records()
        .iter()
        .filter(|r| !is_yes_no(&r.target))
        .cloned()
        .collect();
    Corpus::new(kept).expect("subset of a valid corpus has unique ids")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// The canonical JSONL layout documented at module level.
    CanonicalJsonl,
    /// JSONL where each line merges a VQA question with its annotation:
    /// `question_id`, `image_id`, `question`, `multiple_choice_answer`,
    /// `multiple_choices` (which include the target), optional `answers`
    /// (`[{"answer": ..}]` or plain strings), optional `question_type`, and a
    /// split given as `split` or `data_subtype` (e.g. `val2014`).
    VqaStyle,
    /// The Visual7W telling JSON document: `{"images": [{"image_id", "split",
    /// "qa_pairs": [{"qa_id", "question", "answer", "multiple_choices", "type"}]}]}`.
    V7wStyle,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical-jsonl" | "canonical" | "jsonl" => Ok(Self::CanonicalJsonl),
            "vqa-style" | "vqa" => Ok(Self::VqaStyle),
            "v7w-style" | "v7w" => Ok(Self::V7wStyle),
            other => Err(Error::config("format", format!("unknown corpus format `{other}`"))),
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let records = match format {
        CorpusFormat::CanonicalJsonl => read_jsonl_lines(path, parse_canonical)?,
        CorpusFormat::VqaStyle => read_jsonl_lines(path, parse_vqa_line)?,
        CorpusFormat::V7wStyle => read_v7w(path)?,
    };
    Corpus::new(records)
}

fn read_jsonl_lines(
    path: &Path,
    parse: fn(Value) -> std::result::Result<TripletRecord, String>,
) -> Result<Vec<TripletRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let record = parse(value).map_err(|msg| {
            if let Some(label) = msg.strip_prefix("split:") {
                Error::UnknownSplit(label.to_string())
            } else {
                Error::parse(path, i + 1, msg)
            }
        })?;
        records.push(record);
    }
    Ok(records)
}

fn parse_split(label: &str) -> std::result::Result<Split, String> {
    label.parse().map_err(|_| format!("split:{label}"))
}

fn parse_canonical(value: Value) -> std::result::Result<TripletRecord, String> {
    #[derive(Deserialize)]
    struct Raw {
        id: String,
        image_id: String,
        split: String,
        question: String,
        target: String,
        #[serde(default)]
        decoys: Vec<String>,
        #[serde(default)]
        qtype: Option<String>,
        #[serde(default)]
        human_answers: Option<Vec<String>>,
    }
    let raw: Raw = serde_json::from_value(value).map_err(|e| e.to_string())?;
    Ok(TripletRecord {
        split: parse_split(&raw.split)?,
        id: raw.id,
        image_id: raw.image_id,
        question: raw.question,
        target: raw.target,
        decoys: raw.decoys,
        qtype: raw.qtype,
        human_answers: raw.human_answers,
    })
}

fn id_string(v: Option<&Value>, field: &str) -> std::result::Result<String, String> {
    match v {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(format!("missing or non-scalar `{field}`")),
    }
}

fn str_field(v: &Value, field: &str) -> std::result::Result<String, String> {
    v.get(field)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| format!("missing string `{field}`"))
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    v.and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|x| match x {
                    Value::String(s) => Some(s.clone()),
                    Value::Object(o) => o.get("answer").and_then(Value::as_str).map(str::to_string),
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Candidate lists in the native layouts include the target; keep the rest.
fn decoys_excluding(choices: Vec<String>, target: &str) -> Vec<String> {
    let key = answer_key(target);
    let mut seen = BTreeSet::new();
    choices
        .into_iter()
        .filter(|c| {
            let k = answer_key(c);
            k != key && seen.insert(k)
        })
        .collect()
}

fn parse_vqa_line(value: Value) -> std::result::Result<TripletRecord, String> {
    let id = id_string(value.get("question_id"), "question_id")?;
    let image_id = id_string(value.get("image_id"), "image_id")?;
    let question = str_field(&value, "question")?;
    let target = str_field(&value, "multiple_choice_answer")?;
    let split_label = value
        .get("split")
        .or_else(|| value.get("data_subtype"))
        .and_then(Value::as_str)
        .ok_or("missing `split` or `data_subtype`")?;
    let human = string_list(value.get("answers"));
    Ok(TripletRecord {
        split: parse_split(split_label)?,
        decoys: decoys_excluding(string_list(value.get("multiple_choices")), &target),
        qtype: value.get("question_type").and_then(Value::as_str).map(str::to_string),
        human_answers: (!human.is_empty()).then_some(human),
        id,
        image_id,
        question,
        target,
    })
}

fn read_v7w(path: &Path) -> Result<Vec<TripletRecord>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let images = doc
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(path, 1, "missing `images` array"))?;
    let mut records = Vec::new();
    for image in images {
        let image_id = id_string(image.get("image_id"), "image_id").map_err(|m| Error::parse(path, 0, m))?;
        let split_label = image
            .get("split")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(path, 0, format!("image {image_id} has no split")))?;
        let split: Split = split_label.parse()?;
        for qa in image.get("qa_pairs").and_then(Value::as_array).into_iter().flatten() {
            let id = id_string(qa.get("qa_id"), "qa_id").map_err(|m| Error::parse(path, 0, m))?;
            let question = str_field(qa, "question").map_err(|m| Error::parse(path, 0, m))?;
            let target = str_field(qa, "answer").map_err(|m| Error::parse(path, 0, m))?;
            records.push(TripletRecord {
                id,
                image_id: image_id.clone(),
                split,
                question,
                decoys: decoys_excluding(string_list(qa.get("multiple_choices")), &target),
                target,
                qtype: qa.get("type").and_then(Value::as_str).map(str::to_string),
                human_answers: None,
            });
        }
    }
    Ok(records)
}

/// Writes the canonical JSONL layout.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_jsonl(path, corpus.records())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(items)
}

/// Dense image features keyed by image id.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

const FEATURE_MAGIC: &[u8; 4] = b"DFFS";

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
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

    pub fn contains(&self, image_id: &str) -> bool {
        self.vectors.contains_key(image_id)
    }

    pub fn insert(&mut self, image_id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert(image_id.into(), vector);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Result<&[f32]> {
        self.vectors
            .get(image_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingImage(image_id.to_string()))
    }

    /// `DFFS`, u32 dimension, then entries of (u32 id length, id bytes,
    /// `dim` little-endian f32) until end of file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + self.vectors.len() * (self.dim * 4 + 16));
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in &self.vectors {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let mut reader = ByteReader::new(&bytes);
        if reader.take(4) != Some(FEATURE_MAGIC.as_slice()) {
            return Err(bad("missing DFFS magic"));
        }
        let dim = reader.u32().ok_or_else(|| bad("truncated header"))? as usize;
        if dim == 0 {
            return Err(bad("feature dimension must be positive"));
        }
        let mut store = FeatureStore::new(dim);
        while !reader.is_empty() {
            let len = reader.u32().ok_or_else(|| bad("truncated entry"))? as usize;
            let id = reader
                .take(len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| bad("bad image id"))?
                .to_string();
            let vector = (0..dim)
                .map(|_| reader.f32())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated vector"))?;
            store.vectors.insert(id, vector);
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    EmptyTarget { triplet_id: String },
    DecoyEqualsTarget { triplet_id: String, decoy: String },
    UnresolvableImage { image_id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every invariant violation; never fails.
pub fn validate(corpus: &Corpus, features: Option<&FeatureStore>) -> ValidationReport {
    let mut violations = Vec::new();
    for r in corpus.records() {
        let key = answer_key(&r.target);
        if key.is_empty() {
            violations.push(Violation::EmptyTarget {
                triplet_id: r.id.clone(),
            });
            continue;
        }
        for d in &r.decoys {
            if answer_key(d) == key {
                violations.push(Violation::DecoyEqualsTarget {
                    triplet_id: r.id.clone(),
                    decoy: d.clone(),
                });
            }
        }
    }
    if let Some(store) = features {
        for image_id in corpus.image_index().keys() {
            if !store.contains(image_id) {
                violations.push(Violation::UnresolvableImage {
                    image_id: image_id.clone(),
                });
            }
        }
    }
    ValidationReport {
        records: corpus.len(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const THREE: &str = r#"{"id":"a","image_id":"i1","split":"train","question":"What?","target":"cat","decoys":["dog"]}
{"id":"b","image_id":"i1","split":"train","question":"Where?","target":"park"}
{"id":"c","image_id":"i2","split":"test","question":"Who?","target":"man","qtype":"who"}
"#;

    #[test]
    fn loads_canonical_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(&write(&dir, "c.jsonl", THREE), CorpusFormat::CanonicalJsonl).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.records()[0].id, "a");
        assert_eq!(corpus.image_triplet_ids("i1"), ["a", "b"]);
        assert_eq!(corpus.split_count(Split::Train), 2);
        assert_eq!(corpus.records()[2].qtype.as_deref(), Some("who"));
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{THREE}{}", r#"{"id":"b","image_id":"i3","split":"val","question":"Q","target":"t"}"#);
        let err = load_corpus(&write(&dir, "c.jsonl", &body), CorpusFormat::CanonicalJsonl).unwrap_err();
        assert!(matches!(&err, Error::DuplicateId(id) if id == "b"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{THREE}{{not json\n");
        match load_corpus(&write(&dir, "c.jsonl", &body), CorpusFormat::CanonicalJsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"a","image_id":"i","split":"holdout","question":"q","target":"t"}"#;
        let err = load_corpus(&write(&dir, "c.jsonl", body), CorpusFormat::CanonicalJsonl).unwrap_err();
        assert!(matches!(err, Error::UnknownSplit(s) if s == "holdout"));
    }

    #[test]
    fn v7w_record_keeps_three_human_decoys() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"images":[{"image_id":2345,"split":"val","filename":"v7w_2345.jpg","qa_pairs":[
            {"qa_id":986,"image_id":2345,"question":"What is running?","answer":"A dog.",
             "multiple_choices":["A cat.","A lion.","A tiger."],"type":"what"}]}]}"#;
        let corpus = load_corpus(&write(&dir, "v7w.json", body), CorpusFormat::V7wStyle).unwrap();
        let r = &corpus.records()[0];
        assert_eq!((r.id.as_str(), r.image_id.as_str(), r.split), ("986", "2345", Split::Val));
        assert_eq!(r.decoys.len(), 3);
        assert_eq!(r.qtype.as_deref(), Some("what"));
    }

    #[test]
    fn vqa_line_drops_target_from_choices() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"question_id":1,"image_id":9,"question":"Is it red?","multiple_choice_answer":"yes","multiple_choices":["yes","no","blue","Yes"],"answers":[{"answer":"yes"},{"answer":"yes"}],"data_subtype":"val2014"}"#;
        let corpus = load_corpus(&write(&dir, "vqa.jsonl", body), CorpusFormat::VqaStyle).unwrap();
        let r = &corpus.records()[0];
        assert_eq!(r.split, Split::Val);
        assert_eq!(r.decoys, ["no", "blue"]);
        assert_eq!(r.human_answers.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn validate_findings() {
        let clean = Corpus::new(vec![TripletRecord::new("a", "i1", Split::Train, "q", "cat").with_decoys(["dog"])]).unwrap();
        assert!(validate(&clean, None).is_clean());

        let bad = Corpus::new(vec![
            TripletRecord::new("a", "i1", Split::Train, "q", "cat").with_decoys(["dog", "Cat."]),
            TripletRecord::new("b", "i2", Split::Train, "q", "  ?"),
            TripletRecord::new("c", "i2", Split::Train, "q", "x"),
        ])
        .unwrap();
        let mut store = FeatureStore::new(2);
        store.insert("i1", vec![1.0, 0.0]).unwrap();
        let report = validate(&bad, Some(&store));
        assert_eq!(
            report.violations,
            vec![
                Violation::DecoyEqualsTarget { triplet_id: "a".into(), decoy: "Cat.".into() },
                Violation::EmptyTarget { triplet_id: "b".into() },
                Violation::UnresolvableImage { image_id: "i2".into() },
            ]
        );
    }

    #[test]
    fn yes_no_filter() {
        let corpus = Corpus::new(vec![
            TripletRecord::new("a", "i", Split::Val, "q", "Yes"),
            TripletRecord::new("b", "i", Split::Val, "q", "yellow"),
            TripletRecord::new("c", "i", Split::Val, "q", "no."),
        ])
        .unwrap();
        let kept = filter_yes_no(&corpus);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.records()[0].target, "yellow");
        assert_eq!(corpus.len(), 3);
    }

    #[test]
    fn split_views() {
        let corpus = Corpus::new(vec![
            TripletRecord::new("a", "i", Split::Train, "q", "x"),
            TripletRecord::new("b", "i", Split::Test, "q", "x"),
            TripletRecord::new("c", "j", Split::Train, "q", "x"),
        ])
        .unwrap();
        let ids: Vec<_> = split_view(&corpus, Split::Train).iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(split_view(&corpus, Split::Val).is_empty());
    }

    #[test]
    fn feature_store_round_trip_and_missing_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::new(3);
        store.insert("img-1", vec![0.5, -1.0, 2.0]).unwrap();
        store.insert("img-2", vec![0.0, 0.0, 1.0]).unwrap();
        let p = dir.path().join("f.dffs");
        store.write(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"DFFS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        let back = FeatureStore::load(&p).unwrap();
        assert_eq!(back.get("img-1").unwrap(), &[0.5, -1.0, 2.0]);
        assert!(matches!(back.get("nope"), Err(Error::MissingImage(_))));
        assert!(store.insert("bad", vec![1.0]).is_err());
    }

    fn arb_record() -> impl Strategy<Value = TripletRecord> {
        (
            "[a-z]{1,6}",
            0usize..3,
            "[A-Za-z ?]{0,20}",
            "[a-z]{1,8}",
            prop::collection::vec("[a-z ]{1,8}", 0..4),
            prop::option::of("[a-z]{1,4}"),
        )
            .prop_map(|(image, split, q, t, d, qtype)| {
                let mut r = TripletRecord::new("", image, Split::ALL[split], q, t).with_decoys(d);
                r.qtype = qtype;
                r
            })
    }

    proptest! {
        #[test]
        fn canonical_write_then_load_is_identity(mut records in prop::collection::vec(arb_record(), 0..12)) {
            for (i, r) in records.iter_mut().enumerate() {
                r.id = format!("t{i}");
            }
            let corpus = Corpus::new(records.clone()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.jsonl");
            write_corpus(&corpus, &p).unwrap();
            let back = load_corpus(&p, CorpusFormat::CanonicalJsonl).unwrap();
            prop_assert_eq!(back.records(), &records[..]);
        }

        #[test]
        fn image_index_is_exact_grouping(images in prop::collection::vec(0u8..5, 0..30)) {
            let records: Vec<_> = images
                .iter()
                .enumerate()
                .map(|(i, img)| TripletRecord::new(format!("t{i}"), format!("img{img}"), Split::Train, "q", "a"))
                .collect();
            let corpus = Corpus::new(records).unwrap();
            let mut regrouped: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, r) in corpus.records().iter().enumerate() {
                regrouped.entry(r.image_id.clone()).or_default().push(i);
            }
            prop_assert_eq!(corpus.image_index(), &regrouped);
        }

        #[test]
        fn yes_no_partition(targets in prop::collection::vec(prop::sample::select(vec!["yes", "No", "no!", "yellow", "nope", "2"]), 0..20)) {
            let records: Vec<_> = targets
                .iter()
                .enumerate()
                .map(|(i, t)| TripletRecord::new(format!("t{i}"), "img", Split::Val, "q", *t))
                .collect();
            let corpus = Corpus::new(records).unwrap();
            let kept = filter_yes_no(&corpus);
            let removed = corpus.records().iter().filter(|r| is_yes_no(&r.target)).count();
            prop_assert_eq!(kept.len() + removed, corpus.len());
        }
    }
}
