use std::collections::HashSet;
use std::path::PathBuf;

use decoyforge::wordnet::{wup_sequence, Pos, Taxonomy, WupCache};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/wordnet")
}

fn load() -> Taxonomy {
    Taxonomy::load_wordnet_db(&fixture_dir()).unwrap()
}

/// Offsets listed for `lemma` in an index file, restricted to synsets that
/// the matching data file actually contains.
fn indexed_offsets(pos: &str, lemma: &str) -> Vec<String> {
    let dir = fixture_dir();
    let data = std::fs::read_to_string(dir.join(format!("data.{pos}"))).unwrap();
    let present: HashSet<&str> = data.lines().filter(|l| !l.starts_with("  ")).filter_map(|l| l.split(' ').next()).collect();
    let index = std::fs::read_to_string(dir.join(format!("index.{pos}"))).unwrap();
    let Some(line) = index.lines().find(|l| l.split(' ').next() == Some(lemma)) else {
        return Vec::new();
    };
    let f: Vec<&str> = line.split_whitespace().collect();
    let synset_cnt: usize = f[2].parse().unwrap();
    let p_cnt: usize = f[3].parse().unwrap();
    // lemma pos synset_cnt p_cnt ptr*p_cnt sense_cnt tagsense_cnt offsets...
    let offsets = &f[4 + p_cnt + 2..];
    assert_eq!(offsets.len(), synset_cnt);
    offsets.iter().filter(|o| present.contains(**o)).map(|o| o.to_string()).collect()
}

#[test]
fn lookups_agree_with_the_index_files() {
    let tax = load();
    for word in ["cat", "dog", "woman", "lady", "cute"] {
        let expected = indexed_offsets("noun", word).len() + indexed_offsets("adj", word).len();
        let found = tax.lookup(word);
        assert_eq!(found.len(), expected, "{word}");
        assert!(found.iter().all(|s| matches!(s.pos, Pos::Noun | Pos::Adj)));
    }
    assert!(tax.lookup("zyzzyva").is_empty());
}

#[test]
fn lemma_lists_come_from_the_data_lines() {
    let tax = load();
    let cat_senses = tax.lookup("cat");
    assert!(cat_senses.iter().any(|s| s.lemmas.iter().any(|l| l == "true_cat")));
    assert!(tax.lookup("true cat").iter().any(|s| s.lemmas.iter().any(|l| l == "cat")));
}

#[test]
fn similarity_is_bounded_symmetric_and_reflexive() {
    let tax = load();
    let words = ["cat", "dog", "woman", "lady", "cute"];
    for a in words {
        assert_eq!(tax.wup_word(a, a), 1.0, "{a}");
        for b in words {
            let s = tax.wup_word(a, b);
            assert!((0.0..=1.0).contains(&s), "{a} {b} {s}");
            assert_eq!(s, tax.wup_word(b, a));
        }
    }
    assert!((tax.wup_word("cat", "dog") - 0.857).abs() < 0.005);
}

#[test]
fn cache_and_sequence_scores_on_real_senses() {
    let tax = load();
    let cache = WupCache::new(&tax, 64);
    assert_eq!(cache.wup_word("cat", "dog"), tax.wup_word("cat", "dog"));
    assert_eq!(cache.wup_word("dog", "cat"), tax.wup_word("cat", "dog"));
    assert_eq!(wup_sequence(&["a", "cute", "cat"], &["cat"], &cache), 1.0);
    let mixed = wup_sequence(&["dog"], &["cat"], &cache);
    assert!((mixed - tax.wup_word("cat", "dog")).abs() < 1e-15);
}
