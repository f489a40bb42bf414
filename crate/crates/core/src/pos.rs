//! Part-of-speech feature family: a pluggable tagger interface with a
//! self-contained baseline implementation, an external-tags adapter, and
//! unigram bag-of-POS counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_numeric_token, is_punctuation_token};
use crate::error::{Error, Result};

/// The universal tag inventory, in fixed serialization order.
pub const TAG_NAMES: [&str; 17] = [
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PRT", "PUNCT", "X",
    "PROPN", "AUX", "INTJ", "SYM", "SCONJ",
];

pub const NUM_TAGS: usize = TAG_NAMES.len();

pub fn tag_index(tag: &str) -> Option<usize> {
    TAG_NAMES.iter().position(|t| *t == tag)
}

/// Token sequence → tag sequence, one tag per token, every tag a member of
/// the inventory.
pub trait Tagger {
    fn tag(&self, essay_id: &str, tokens: &[String]) -> Result<Vec<String>>;
}

/// Lexicon lookup with suffix, digit, and punctuation fallbacks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BaselineTagger {
    /// Case-folded word → tag.
    pub lexicon: BTreeMap<String, String>,
}

impl BaselineTagger {
    pub fn new(lexicon: BTreeMap<String, String>) -> Result<BaselineTagger> {
        for (word, tag) in &lexicon {
            if tag_index(tag).is_none() {
                return Err(Error::Data(format!(
                    "lexicon entry {word:?} has unknown tag {tag:?}"
                )));
            }
        }
        Ok(BaselineTagger { lexicon })
    }

    /// Load a `word<TAB>TAG` lexicon; `#` starts a comment line.
    pub fn load(path: impl AsRef<Path>) -> Result<BaselineTagger> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Resource {
            kind: "POS lexicon",
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut lexicon = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (word, tag) = trimmed.split_once('\t').ok_or_else(|| {
                Error::Data(format!("lexicon line {}: expected word<TAB>TAG", i + 1))
            })?;
            lexicon.insert(word.trim().to_lowercase(), tag.trim().to_string());
        }
        BaselineTagger::new(lexicon)
    }

    fn tag_one(&self, token: &str) -> String {
        if let Some(tag) = self.lexicon.get(&token.to_lowercase()) {
            return tag.clone();
        }
        let folded = token.to_lowercase();
        for (suffix, tag) in [
            ("ly", "ADV"),
            ("ing", "VERB"),
            ("ed", "VERB"),
            ("tion", "NOUN"),
            ("ness", "NOUN"),
            ("ment", "NOUN"),
            ("ous", "ADJ"),
            ("ful", "ADJ"),
            ("ive", "ADJ"),
        ] {
            if folded.len() > suffix.len() && folded.ends_with(suffix) {
                return tag.to_string();
            }
        }
        if is_numeric_token(token) {
            return "NUM".to_string();
        }
        if is_punctuation_token(token) {
            return "PUNCT".to_string();
        }
        "NOUN".to_string()
    }
}

impl Tagger for BaselineTagger {
    fn tag(&self, _essay_id: &str, tokens: &[String]) -> Result<Vec<String>> {
        Ok(tokens.iter().map(|t| self.tag_one(t)).collect())
    }
}

/// Serves pre-computed tags keyed by essay id, e.g. from a heavier external
/// tagger run offline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExternalTagger {
    pub tags: BTreeMap<String, Vec<String>>,
}

impl ExternalTagger {
    /// Load a file of `essay-id TAG TAG ...` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<ExternalTagger> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Resource {
            kind: "POS tags",
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut tags = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let id = match fields.next() {
                Some(id) => id.to_string(),
                None => continue,
            };
            let seq: Vec<String> = fields.map(str::to_string).collect();
            for tag in &seq {
                if tag_index(tag).is_none() {
                    return Err(Error::Data(format!(
                        "tags line {}: unknown tag {tag:?}",
                        i + 1
                    )));
                }
            }
            if tags.insert(id.clone(), seq).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(ExternalTagger { tags })
    }
}

impl Tagger for ExternalTagger {
    fn tag(&self, essay_id: &str, tokens: &[String]) -> Result<Vec<String>> {
        let seq = self
            .tags
            .get(essay_id)
            .ok_or_else(|| Error::Data(format!("no external tags for essay {essay_id:?}")))?;
        if seq.len() != tokens.len() {
            return Err(Error::Data(format!(
                "essay {essay_id:?}: {} external tags for {} tokens",
                seq.len(),
                tokens.len()
            )));
        }
        Ok(seq.clone())
    }
}

/// Unigram bag of POS tags: position i counts occurrences of `TAG_NAMES[i]`.
pub fn pos_bow(tags: &[String]) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; NUM_TAGS];
    for tag in tags {
        let idx = tag_index(tag)
            .ok_or_else(|| Error::Data(format!("tag {tag:?} outside the tag inventory")))?;
        counts[idx] += 1.0;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(raw: &[&str]) -> Vec<String> {
        raw.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn lexicon_beats_suffix_rules() {
        let mut lexicon = BTreeMap::new();
        lexicon.insert("the".to_string(), "DET".to_string());
        lexicon.insert("fly".to_string(), "VERB".to_string());
        let tagger = BaselineTagger::new(lexicon).unwrap();
        let tags = tagger.tag("e", &strings(&["The", "fly"])).unwrap();
        assert_eq!(tags, vec!["DET", "VERB"]);
    }

    #[test]
    fn fallback_chain_covers_all_shapes() {
        let tagger = BaselineTagger::default();
        let tokens = strings(&["quickly", "running", "happiness", "joyous", "42", "!", "zebra"]);
        let tags = tagger.tag("e", &tokens).unwrap();
        assert_eq!(tags, vec!["ADV", "VERB", "NOUN", "ADJ", "NUM", "PUNCT", "NOUN"]);
    }

    #[test]
    fn suffix_requires_a_stem() {
        let tagger = BaselineTagger::default();
        // "ly" alone is not suffixed; "ed" alone likewise.
        let tags = tagger.tag("e", &strings(&["ly", "ed"])).unwrap();
        assert_eq!(tags, vec!["NOUN", "NOUN"]);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let tagger = BaselineTagger::default();
        assert!(tagger.tag("e", &[]).unwrap().is_empty());
    }

    #[test]
    fn lexicon_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("lex.tsv");
        std::fs::write(&good, "# comment\nthe\tDET\nrun\tVERB\n").unwrap();
        let tagger = BaselineTagger::load(&good).unwrap();
        assert_eq!(tagger.lexicon.len(), 2);

        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "word\tBOGUS\n").unwrap();
        assert!(BaselineTagger::load(&bad).is_err());
    }

    #[test]
    fn external_tagger_checks_ids_and_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.txt");
        std::fs::write(&path, "e1 DET NOUN\ne2 VERB\n").unwrap();
        let tagger = ExternalTagger::load(&path).unwrap();
        assert_eq!(
            tagger.tag("e1", &strings(&["the", "cat"])).unwrap(),
            vec!["DET", "NOUN"]
        );
        assert!(tagger.tag("e1", &strings(&["one"])).is_err());
        assert!(tagger.tag("missing", &strings(&["x"])).is_err());

        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "e1 WRONG\n").unwrap();
        assert!(ExternalTagger::load(&bad).is_err());
    }

    #[test]
    fn pos_bow_counts_tags() {
        let counts = pos_bow(&strings(&["DET", "NOUN", "NOUN"])).unwrap();
        assert_eq!(counts[tag_index("DET").unwrap()], 1.0);
        assert_eq!(counts[tag_index("NOUN").unwrap()], 2.0);
        assert_eq!(counts.iter().sum::<f64>(), 3.0);
        assert_eq!(pos_bow(&[]).unwrap(), vec![0.0; NUM_TAGS]);
        assert!(pos_bow(&strings(&["NOPE"])).is_err());
    }

    proptest! {
        #[test]
        fn baseline_preserves_length_and_inventory(
            tokens in proptest::collection::vec("[a-zA-Z0-9.!?,]{1,10}", 0..20)
        ) {
            let tagger = BaselineTagger::default();
            let tags = tagger.tag("e", &tokens).unwrap();
            prop_assert_eq!(tags.len(), tokens.len());
            prop_assert!(tags.iter().all(|t| tag_index(t).is_some()));
            let bow = pos_bow(&tags).unwrap();
            prop_assert_eq!(bow.iter().sum::<f64>() as usize, tokens.len());
        }

        #[test]
        fn pos_bow_is_permutation_invariant(seed in 0u64..50) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut tags = strings(&["DET", "NOUN", "VERB", "NOUN", "PUNCT", "ADV"]);
            let baseline = pos_bow(&tags).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            tags.shuffle(&mut rng);
            prop_assert_eq!(pos_bow(&tags).unwrap(), baseline);
        }
    }
}
