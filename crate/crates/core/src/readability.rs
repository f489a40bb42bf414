//! Numeric feature family: surface counts, readability indices, and
//! dictionary-based lexical counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{count_syllables, is_numeric_token, is_punctuation_token, Dataset, Essay};
use crate::error::{Error, Result};

/// Canonical feature registry, in output order. The last entry flags essays
/// where one or more index formulas had a zero denominator.
pub const NUMERIC_FEATURE_NAMES: &[&str] = &[
    "token_count",
    "word_count",
    "sentence_count",
    "letter_count",
    "character_count",
    "syllable_count",
    "complex_word_count",
    "long_word_count",
    "punctuation_count",
    "numeric_token_count",
    "distinct_word_count",
    "characters_per_word",
    "letters_per_word",
    "syllables_per_word",
    "words_per_sentence",
    "letters_per_sentence",
    "complex_word_ratio",
    "long_word_ratio",
    "type_token_ratio",
    "flesch_reading_ease",
    "flesch_kincaid_grade",
    "coleman_liau",
    "gunning_fog",
    "automated_readability",
    "smog",
    "lix",
    "rix",
    "difficult_words",
    "misspelled_words",
    "duplicate_words",
    "low_idf_words",
    "degenerate_flag",
];

/// Surface statistics of one essay. A "word" is any token containing an
/// alphanumeric character; letters count alphabetic characters only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub tokens: usize,
    pub words: usize,
    pub sentences: usize,
    pub letters: usize,
    /// Alphanumeric characters.
    pub characters: usize,
    pub syllables: usize,
    /// Words with at least three syllables.
    pub complex_words: usize,
    /// Words with at least seven letters.
    pub long_words: usize,
    pub punctuation_tokens: usize,
    pub numeric_tokens: usize,
    /// Distinct case-folded word forms.
    pub distinct_words: usize,
}

impl TextStats {
    pub fn from_essay(essay: &Essay) -> TextStats {
        let mut stats = TextStats {
            tokens: essay.tokens.len(),
            sentences: essay.sentence_count(),
            ..TextStats::default()
        };
        let mut types = BTreeSet::new();
        for token in &essay.tokens {
            let letters = token.chars().filter(|c| c.is_alphabetic()).count();
            stats.letters += letters;
            stats.characters += token.chars().filter(|c| c.is_alphanumeric()).count();
            if is_punctuation_token(token) {
                stats.punctuation_tokens += 1;
                continue;
            }
            stats.words += 1;
            types.insert(token.to_lowercase());
            if is_numeric_token(token) {
                stats.numeric_tokens += 1;
            }
            if letters >= 7 {
                stats.long_words += 1;
            }
            if let Ok(s) = count_syllables(token) {
                stats.syllables += s;
                if s >= 3 {
                    stats.complex_words += 1;
                }
            }
        }
        stats.distinct_words = types.len();
        debug_assert!(stats.complex_words <= stats.words);
        stats
    }

    pub fn words_per_sentence(&self) -> Result<f64> {
        ratio(self.words, self.sentences, "sentences")
    }

    pub fn characters_per_word(&self) -> Result<f64> {
        ratio(self.characters, self.words, "words")
    }

    pub fn syllables_per_word(&self) -> Result<f64> {
        ratio(self.syllables, self.words, "words")
    }
}

fn ratio(num: usize, den: usize, what: &str) -> Result<f64> {
    if den == 0 {
        return Err(Error::Degenerate(format!("zero {what}")));
    }
    Ok(num as f64 / den as f64)
}

fn require(stats: &TextStats, words: bool, sentences: bool) -> Result<()> {
    if words && stats.words == 0 {
        return Err(Error::Degenerate("zero words".into()));
    }
    if sentences && stats.sentences == 0 {
        return Err(Error::Degenerate("zero sentences".into()));
    }
    Ok(())
}

/// 206.835 − 1.015·(words/sentences) − 84.6·(syllables/words).
pub fn flesch_reading_ease(stats: &TextStats) -> Result<f64> {
    require(stats, true, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    Ok(206.835 - 1.015 * (w / s) - 84.6 * (stats.syllables as f64 / w))
}

/// 0.39·(words/sentences) + 11.8·(syllables/words) − 15.59.
pub fn flesch_kincaid_grade(stats: &TextStats) -> Result<f64> {
    require(stats, true, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    Ok(0.39 * (w / s) + 11.8 * (stats.syllables as f64 / w) - 15.59)
}

/// 0.0588·L − 0.296·S − 15.8 with L = letters and S = sentences per
/// 100 words.
pub fn coleman_liau(stats: &TextStats) -> Result<f64> {
    require(stats, true, false)?;
    let w = stats.words as f64;
    let l = 100.0 * stats.letters as f64 / w;
    let s = 100.0 * stats.sentences as f64 / w;
    Ok(0.0588 * l - 0.296 * s - 15.8)
}

/// 0.4·[(words/sentences) + 100·(complex_words/words)].
pub fn gunning_fog(stats: &TextStats) -> Result<f64> {
    require(stats, true, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    Ok(0.4 * (w / s + 100.0 * stats.complex_words as f64 / w))
}

/// 4.71·(characters/words) + 0.5·(words/sentences) − 21.43.
pub fn automated_readability(stats: &TextStats) -> Result<f64> {
    require(stats, true, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    Ok(4.71 * (stats.characters as f64 / w) + 0.5 * (w / s) - 21.43)
}

/// 1.043·sqrt(30·complex_words/sentences) + 3.1291.
pub fn smog(stats: &TextStats) -> Result<f64> {
    require(stats, false, true)?;
    let s = stats.sentences as f64;
    Ok(1.043 * (30.0 * stats.complex_words as f64 / s).sqrt() + 3.1291)
}

/// words/sentences + 100·(long_words/words).
pub fn lix(stats: &TextStats) -> Result<f64> {
    require(stats, true, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    Ok(w / s + 100.0 * stats.long_words as f64 / w)
}

/// long_words/sentences.
pub fn rix(stats: &TextStats) -> Result<f64> {
    require(stats, false, true)?;
    Ok(stats.long_words as f64 / stats.sentences as f64)
}

/// Word lists and an idf table backing the dictionary-based counts.
///
/// An empty set disables its count (the feature stays 0) rather than
/// erroring, so partial resource bundles remain usable.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LexicalResources {
    pub dictionary: BTreeSet<String>,
    pub easy_words: BTreeSet<String>,
    pub idf_table: BTreeMap<String, f64>,
}

impl LexicalResources {
    /// Load a one-word-per-line list; `#` starts a comment line. Entries are
    /// case-folded.
    pub fn load_word_list(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Resource {
            kind: "word list",
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut words = BTreeSet::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            words.insert(trimmed.to_lowercase());
        }
        Ok(words)
    }

    /// Build the idf table from training-corpus document frequencies:
    /// idf(t) = ln((1+N)/(1+df)) + 1 over case-folded word tokens.
    pub fn fit_idf(&mut self, dataset: &Dataset) {
        let n = dataset.len() as f64;
        self.idf_table = dataset
            .vocabulary
            .counts
            .iter()
            .filter(|(tok, _)| tok.chars().any(char::is_alphabetic))
            .map(|(tok, stats)| {
                let idf = ((1.0 + n) / (1.0 + stats.doc_freq as f64)).ln() + 1.0;
                (tok.clone(), idf)
            })
            .collect();
    }

    pub fn mean_idf(&self) -> f64 {
        if self.idf_table.is_empty() {
            return 0.0;
        }
        self.idf_table.values().sum::<f64>() / self.idf_table.len() as f64
    }
}

/// Dictionary-based counts for one essay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexicalCounts {
    pub difficult: usize,
    pub misspelled: usize,
    pub duplicate: usize,
    pub low_idf: usize,
}

/// Count difficult, misspelled, duplicate and low-idf words.
///
/// Lookups are case-folded and restricted to tokens containing at least one
/// alphabetic character; a token missing from the idf table never counts as
/// low-idf.
pub fn lexical_counts(essay: &Essay, resources: &LexicalResources) -> LexicalCounts {
    let mut counts = LexicalCounts::default();
    let mean_idf = resources.mean_idf();
    let mut types = BTreeSet::new();
    let mut occurrences = 0usize;
    for token in &essay.tokens {
        if !token.chars().any(char::is_alphabetic) {
            continue;
        }
        occurrences += 1;
        let folded = token.to_lowercase();
        if !resources.dictionary.is_empty() && !resources.dictionary.contains(&folded) {
            counts.misspelled += 1;
        }
        if !resources.easy_words.is_empty()
            && !resources.easy_words.contains(&folded)
            && count_syllables(token).map(|s| s >= 3).unwrap_or(false)
        {
            counts.difficult += 1;
        }
        if let Some(&idf) = resources.idf_table.get(&folded) {
            if idf < mean_idf {
                counts.low_idf += 1;
            }
        }
        types.insert(folded);
    }
    counts.duplicate = occurrences - types.len();
    counts
}

/// Dense named numeric feature vector in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeatureVector {
    pub values: Vec<f64>,
}

impl NumericFeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        NUMERIC_FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }
}

/// Extract the full numeric registry for one essay. Index formulas with a
/// zero denominator contribute 0 and set the trailing degenerate flag to 1.
pub fn extract_numeric(essay: &Essay, resources: &LexicalResources) -> NumericFeatureVector {
    let stats = TextStats::from_essay(essay);
    let lexical = lexical_counts(essay, resources);
    let mut degenerate = false;
    let mut guard = |r: Result<f64>| match r {
        Ok(v) => v,
        Err(_) => {
            degenerate = true;
            0.0
        }
    };

    let mut values = Vec::with_capacity(NUMERIC_FEATURE_NAMES.len());
    values.push(stats.tokens as f64);
    values.push(stats.words as f64);
    values.push(stats.sentences as f64);
    values.push(stats.letters as f64);
    values.push(stats.characters as f64);
    values.push(stats.syllables as f64);
    values.push(stats.complex_words as f64);
    values.push(stats.long_words as f64);
    values.push(stats.punctuation_tokens as f64);
    values.push(stats.numeric_tokens as f64);
    values.push(stats.distinct_words as f64);
    values.push(guard(stats.characters_per_word()));
    values.push(guard(ratio(stats.letters, stats.words, "words")));
    values.push(guard(stats.syllables_per_word()));
    values.push(guard(stats.words_per_sentence()));
    values.push(guard(ratio(stats.letters, stats.sentences, "sentences")));
    values.push(guard(ratio(stats.complex_words, stats.words, "words")));
    values.push(guard(ratio(stats.long_words, stats.words, "words")));
    values.push(guard(ratio(stats.distinct_words, stats.words, "words")));
    values.push(guard(flesch_reading_ease(&stats)));
    values.push(guard(flesch_kincaid_grade(&stats)));
    values.push(guard(coleman_liau(&stats)));
    values.push(guard(gunning_fog(&stats)));
    values.push(guard(automated_readability(&stats)));
    values.push(guard(smog(&stats)));
    values.push(guard(lix(&stats)));
    values.push(guard(rix(&stats)));
    values.push(lexical.difficult as f64);
    values.push(lexical.misspelled as f64);
    values.push(lexical.duplicate as f64);
    values.push(lexical.low_idf as f64);
    values.push(if degenerate { 1.0 } else { 0.0 });

    debug_assert_eq!(values.len(), NUMERIC_FEATURE_NAMES.len());
    debug_assert!(values.iter().all(|v| v.is_finite()));
    NumericFeatureVector { values }
}
