//! Hypernym taxonomy and Wu-Palmer similarity.
//!
//! Depth follows the longest hypernym chain: a synset without hypernyms has
//! depth 1 and every other synset sits one below its deepest parent. All
//! sub-hierarchies hang under a virtual root of depth 0 so any two synsets
//! share a subsumer.
//!
//! For two synsets the least common subsumer is the deepest shared ancestor
//! (preferring the first synset itself, then the smallest id). With `D` its
//! depth and `d_a`, `d_b` the shortest hypernym-path lengths down to each
//! synset,
//!
//! ```text
//! wup(a, b) = 2 D / ((d_a + D) + (d_b + D))
//! ```
//!
//! When the only shared ancestor is the virtual root it counts as depth 1, so
//! unrelated synsets score small but positive.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::num::NonZeroUsize;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::answer_key;

pub const VIRTUAL_ROOT: &str = "*ROOT*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Adj,
    Other,
}

impl Pos {
    fn parse(s: &str) -> Pos {
        match s.to_ascii_lowercase().as_str() {
            "n" | "noun" => Pos::Noun,
            "a" | "s" | "adj" | "adjective" => Pos::Adj,
            _ => Pos::Other,
        }
    }

    fn indexed(self) -> bool {
        matches!(self, Pos::Noun | Pos::Adj)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synset {
    pub id: String,
    pub pos: Pos,
    pub lemmas: Vec<String>,
    /// Parent synset ids. Top-level synsets list the virtual root.
    pub hypernyms: Vec<String>,
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaxonomyFormat {
    /// `synset_id TAB pos TAB lemma,lemma TAB parent_id,parent_id`
    EdgeList,
    /// A directory holding WordNet `data.noun`/`data.adj` and optionally `index.noun`/`index.adj`.
    WordnetDb,
}

impl FromStr for TaxonomyFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-list" | "edges" => Ok(Self::EdgeList),
            "wordnet-db" | "wordnet" => Ok(Self::WordnetDb),
            other => Err(Error::config("taxonomy-format", format!("unknown taxonomy format `{other}`"))),
        }
    }
}

/// Raw node before linking.
struct Node {
    id: String,
    pos: Pos,
    lemmas: Vec<String>,
    parents: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    synsets: Vec<Synset>,
    parents: Vec<Vec<u32>>,
    by_id: HashMap<String, u32>,
    lemma_index: HashMap<String, Vec<u32>>,
}

impl Taxonomy {
    pub fn load(path: &Path, format: TaxonomyFormat) -> Result<Self> {
        match format {
            TaxonomyFormat::EdgeList => Self::load_edge_list(path),
            TaxonomyFormat::WordnetDb => Self::load_wordnet_db(path),
        }
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut nodes = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields[0].trim().is_empty() {
                return Err(Error::parse(path, i + 1, "expected `id TAB pos TAB lemmas [TAB parents]`"));
            }
            let list = |s: Option<&&str>| -> Vec<String> {
                s.map(|s| {
                    s.split(',')
                        .map(str::trim)
                        .filter(|x| !x.is_empty())
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default()
            };
            nodes.push(Node {
                id: fields[0].trim().to_string(),
                pos: Pos::parse(fields[1].trim()),
                lemmas: list(fields.get(2)),
                parents: list(fields.get(3)),
            });
        }
        Self::from_nodes(nodes, None)
    }

    /// Builds a taxonomy from in-memory `(id, pos, lemmas, parents)` rows.
    pub fn from_rows<S: Into<String>>(rows: impl IntoIterator<Item = (S, Pos, Vec<S>, Vec<S>)>) -> Result<Self> {
        let nodes = rows
            .into_iter()
            .map(|(id, pos, lemmas, parents)| Node {
                id: id.into(),
                pos,
                lemmas: lemmas.into_iter().map(Into::into).collect(),
                parents: parents.into_iter().map(Into::into).collect(),
            })
            .collect();
        Self::from_nodes(nodes, None)
    }

    pub fn load_wordnet_db(dir: &Path) -> Result<Self> {
        let mut nodes = Vec::new();
        for (file, tag) in [("data.noun", 'n'), ("data.adj", 'a')] {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            parse_wordnet_data(&path, tag, &mut nodes)?;
        }
        if nodes.is_empty() {
            return Err(Error::parse(dir, 0, "no data.noun or data.adj found"));
        }
        let mut senses: Vec<(String, String)> = Vec::new();
        let mut have_index = false;
        for (file, tag) in [("index.noun", 'n'), ("index.adj", 'a')] {
            let path = dir.join(file);
            if path.exists() {
                have_index = true;
                parse_wordnet_index(&path, tag, &mut senses)?;
            }
        }
        Self::from_nodes(nodes, have_index.then_some(senses))
    }

    /// Links nodes, computes depths, and builds the lemma index. `senses`, when
    /// given, is an ordered `(lemma, synset id)` list overriding lemma order.
    fn from_nodes(nodes: Vec<Node>, senses: Option<Vec<(String, String)>>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(nodes.len() + 1);
        by_id.insert(VIRTUAL_ROOT.to_string(), 0u32);
        for (i, n) in nodes.iter().enumerate() {
            if by_id.insert(n.id.clone(), (i + 1) as u32).is_some() {
                return Err(Error::config("taxonomy", format!("duplicate synset id `{}`", n.id)));
            }
        }
        let count = nodes.len() + 1;
        let mut parents: Vec<Vec<u32>> = vec![Vec::new(); count];
        let mut children: Vec<Vec<u32>> = vec![Vec::new(); count];
        for (i, n) in nodes.iter().enumerate() {
            let me = (i + 1) as u32;
            let mut ps: Vec<u32> = Vec::new();
            for p in &n.parents {
                let &pi = by_id.get(p).ok_or_else(|| Error::DanglingParent {
                    child: n.id.clone(),
                    parent: p.clone(),
                })?;
                if !ps.contains(&pi) {
                    ps.push(pi);
                }
            }
            if ps.is_empty() {
                ps.push(0);
            }
            for &p in &ps {
                children[p as usize].push(me);
            }
            parents[me as usize] = ps;
        }

        // Kahn's algorithm from the virtual root; leftovers sit on a cycle.
        let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut depth = vec![0u32; count];
        let mut queue = VecDeque::from([0u32]);
        let mut seen = 0usize;
        while let Some(s) = queue.pop_front() {
            seen += 1;
            for &c in &children[s as usize] {
                let c = c as usize;
                depth[c] = depth[c].max(depth[s as usize] + 1);
                pending[c] -= 1;
                if pending[c] == 0 {
                    queue.push_back(c as u32);
                }
            }
        }
        if seen != count {
            let stuck = (1..count)
                .filter(|&i| pending[i] > 0)
                .map(|i| nodes[i - 1].id.as_str())
                .min()
                .unwrap_or_default();
            return Err(Error::Cycle(stuck.to_string()));
        }

        let mut synsets = Vec::with_capacity(count);
        synsets.push(Synset {
            id: VIRTUAL_ROOT.to_string(),
            pos: Pos::Other,
            lemmas: Vec::new(),
            hypernyms: Vec::new(),
            depth: 0,
        });
        for (i, n) in nodes.into_iter().enumerate() {
            let me = i + 1;
            let hypernyms = if n.parents.is_empty() {
                vec![VIRTUAL_ROOT.to_string()]
            } else {
                n.parents
            };
            synsets.push(Synset {
                id: n.id,
                pos: n.pos,
                lemmas: n.lemmas,
                hypernyms,
                depth: depth[me],
            });
        }

        let mut lemma_index: HashMap<String, Vec<u32>> = HashMap::new();
        let mut push = |lemma: &str, idx: u32| {
            let entry = lemma_index.entry(lemma_key(lemma)).or_default();
            if !entry.contains(&idx) {
                entry.push(idx);
            }
        };
        if let Some(senses) = senses {
            for (lemma, id) in senses {
                if let Some(&idx) = by_id.get(&id) {
                    if synsets[idx as usize].pos.indexed() {
                        push(&lemma, idx);
                    }
                }
            }
        }
        // Data-file lemmas fill in anything the index files did not mention.
        for (idx, s) in synsets.iter().enumerate() {
            if s.pos.indexed() {
                for lemma in &s.lemmas {
                    push(lemma, idx as u32);
                }
            }
        }

        Ok(Self {
            synsets,
            parents,
            by_id,
            lemma_index,
        })
    }

    /// Number of real synsets (the virtual root is not counted).
    pub fn len(&self) -> usize {
        self.synsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn virtual_root(&self) -> &Synset {
        &self.synsets[0]
    }

    pub fn synset(&self, id: &str) -> Option<&Synset> {
        self.by_id.get(id).map(|&i| &self.synsets[i as usize])
    }

    pub fn synsets(&self) -> impl Iterator<Item = &Synset> {
        self.synsets.iter().skip(1)
    }

    /// NOUN and ADJ synsets for a word, in sense order.
    pub fn lookup(&self, word: &str) -> Vec<&Synset> {
        self.lemma_index
            .get(&lemma_key(word))
            .map(|v| v.iter().map(|&i| &self.synsets[i as usize]).collect())
            .unwrap_or_default()
    }

    /// Shortest hypernym distance from `start` to each of its ancestors (itself included).
    fn ancestors(&self, start: u32) -> HashMap<u32, u32> {
        let mut dist = HashMap::new();
        dist.insert(start, 0);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            let d = dist[&s];
            for &p in &self.parents[s as usize] {
                dist.entry(p).or_insert_with(|| {
                    queue.push_back(p);
                    d + 1
                });
            }
        }
        dist
    }

    fn wup_index(&self, a: u32, b: u32) -> f64 {
        if a == b {
            return 1.0;
        }
        let da = self.ancestors(a);
        let db = self.ancestors(b);
        let mut best: Option<u32> = None;
        for (&c, _) in da.iter().filter(|(c, _)| db.contains_key(c)) {
            best = Some(match best {
                None => c,
                Some(cur) => {
                    let (sc, scur) = (&self.synsets[c as usize], &self.synsets[cur as usize]);
                    let better = sc.depth > scur.depth
                        || (sc.depth == scur.depth && (c == a || (cur != a && sc.id < scur.id)));
                    if better {
                        c
                    } else {
                        cur
                    }
                }
            });
        }
        let lcs = best.expect("virtual root is a common ancestor");
        let depth = f64::from(self.synsets[lcs as usize].depth.max(1));
        let len_a = f64::from(da[&lcs]) + depth;
        let len_b = f64::from(db[&lcs]) + depth;
        2.0 * depth / (len_a + len_b)
    }

    /// Wu-Palmer similarity of two synsets, in `(0, 1]`. Unknown ids score 0.
    pub fn wup_synset(&self, a: &str, b: &str) -> f64 {
        match (self.by_id.get(a), self.by_id.get(b)) {
            (Some(&x), Some(&y)) => self.wup_index(x, y),
            _ => 0.0,
        }
    }

    /// Best Wu-Palmer score over all NOUN/ADJ sense pairs of two words. Words
    /// without such senses fall back to exact (normalized) equality.
    pub fn wup_word(&self, w1: &str, w2: &str) -> f64 {
        let s1 = self.lemma_index.get(&lemma_key(w1));
        let s2 = self.lemma_index.get(&lemma_key(w2));
        match (s1, s2) {
            (Some(s1), Some(s2)) => {
                let mut best = 0.0f64;
                for &a in s1 {
                    for &b in s2 {
                        best = best.max(self.wup_index(a, b));
                        if best >= 1.0 {
                            return 1.0;
                        }
                    }
                }
                best
            }
            _ => {
                if answer_key(w1) == answer_key(w2) && !answer_key(w1).is_empty() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn lemma_key(lemma: &str) -> String {
    lemma.trim().to_lowercase().replace('_', " ")
}

/// Adjective lemmas in `data.adj` may carry a syntactic marker such as `(p)`.
fn strip_adj_marker(word: &str) -> &str {
    match word.find('(') {
        Some(i) if word.ends_with(')') => &word[..i],
        _ => word,
    }
}

fn parse_wordnet_data(path: &Path, tag: char, nodes: &mut Vec<Node>) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        // License header lines start with two spaces.
        if line.starts_with(' ') || line.trim().is_empty() {
            continue;
        }
        let body = line.split(" | ").next().unwrap_or(&line);
        let f: Vec<&str> = body.split_whitespace().collect();
        let bad = |m: &str| Error::parse(path, lineno, m.to_string());
        if f.len() < 4 {
            return Err(bad("short synset line"));
        }
        let offset = f[0];
        let pos = Pos::parse(f[2]);
        let w_cnt = usize::from_str_radix(f[3], 16).map_err(|_| bad("bad word count"))?;
        let mut at = 4;
        let mut lemmas = Vec::with_capacity(w_cnt);
        for _ in 0..w_cnt {
            let word = f.get(at).ok_or_else(|| bad("truncated lemma list"))?;
            lemmas.push(strip_adj_marker(word).to_string());
            at += 2;
        }
        let p_cnt: usize = f.get(at).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad pointer count"))?;
        at += 1;
        let mut parents = Vec::new();
        for _ in 0..p_cnt {
            let ptr = f.get(at..at + 4).ok_or_else(|| bad("truncated pointer"))?;
            if ptr[0] == "@" || ptr[0] == "@i" {
                let ptag = match ptr[2] {
                    "s" => 'a',
                    p => p.chars().next().unwrap_or(tag),
                };
                parents.push(format!("{}-{}", ptr[1], ptag));
            }
            at += 4;
        }
        nodes.push(Node {
            id: format!("{offset}-{tag}"),
            pos,
            lemmas,
            parents,
        });
    }
    Ok(())
}

fn parse_wordnet_index(path: &Path, tag: char, senses: &mut Vec<(String, String)>) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with(' ') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse(path, i + 1, "malformed index line");
        let synset_cnt: usize = f.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let p_cnt: usize = f.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let start = 4 + p_cnt + 2;
        let offsets = f.get(start..start + synset_cnt).ok_or_else(bad)?;
        for off in offsets {
            senses.push((f[0].to_string(), format!("{off}-{tag}")));
        }
    }
    Ok(())
}

/// Word-level similarity backing [`wup_sequence`].
pub trait WordSimilarity {
    fn word_similarity(&self, a: &str, b: &str) -> f64;
}

impl WordSimilarity for Taxonomy {
    fn word_similarity(&self, a: &str, b: &str) -> f64 {
        self.wup_word(a, b)
    }
}

/// Thread-safe bounded memo of [`Taxonomy::wup_word`], keyed by unordered word pair.
pub struct WupCache<'t> {
    taxonomy: &'t Taxonomy,
    cache: Mutex<LruCache<(String, String), f64>>,
}

impl<'t> WupCache<'t> {
    pub const DEFAULT_CAPACITY: usize = 1 << 18;

    pub fn new(taxonomy: &'t Taxonomy, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        Self {
            taxonomy,
            cache: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn taxonomy(&self) -> &'t Taxonomy {
        self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wup_word(&self, a: &str, b: &str) -> f64 {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return v;
        }
        // Computed outside the lock; racing workers store the same value.
        let v = self.taxonomy.wup_word(&key.0, &key.1);
        self.cache.lock().unwrap().put(key, v);
        v
    }
}

impl WordSimilarity for WupCache<'_> {
    fn word_similarity(&self, a: &str, b: &str) -> f64 {
        self.wup_word(a, b)
    }
}

/// Larger of the two directed products of per-word best matches. Either
/// sequence empty gives 0.
pub fn wup_sequence<S, A, B>(s1: &[A], s2: &[B], sim: &S) -> f64
where
    S: WordSimilarity + ?Sized,
    A: AsRef<str>,
    B: AsRef<str>,
{
    if s1.is_empty() || s2.is_empty() {
        return 0.0;
    }
    let mut forward = 1.0;
    for w1 in s1 {
        forward *= s2
            .iter()
            .map(|w2| sim.word_similarity(w1.as_ref(), w2.as_ref()))
            .fold(0.0, f64::max);
    }
    let mut backward = 1.0;
    for w2 in s2 {
        backward *= s1
            .iter()
            .map(|w1| sim.word_similarity(w1.as_ref(), w2.as_ref()))
            .fold(0.0, f64::max);
    }
    forward.max(backward)
}

/// Unique words reachable through the lemma index, for diagnostics and tests.
pub fn vocabulary(tax: &Taxonomy) -> HashSet<&str> {
    tax.lemma_index.keys().map(String::as_str).collect()
}
