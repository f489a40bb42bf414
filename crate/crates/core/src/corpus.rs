//! Dataset ingestion: tokenization, sentence splitting, syllable counting,
//! and vocabulary statistics.
//!
//! The tokenizer and sentence splitter implement a fixed, deterministic rule
//! set so every feature family downstream sees the same segmentation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level::Level;

/// Abbreviations whose trailing period does not end a sentence.
const ABBREVIATIONS: &[&str] = &["mr", "mrs", "dr", "etc", "e.g", "i.e"];

fn is_word_connector(c: char) -> bool {
    c == '\'' || c == '\u{2019}' || c == '-'
}

/// Split text into tokens.
///
/// Rules: whitespace separates tokens; leading and trailing punctuation
/// become standalone single-character tokens; apostrophes and hyphens stay
/// inside a token when surrounded by alphanumerics; a run of digits with
/// interior `.` or `,` forms a single numeric token. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_ascii_digit() {
                // Longest run of digits/./, that still ends on a digit.
                let mut j = i + 1;
                while j < chars.len()
                    && (chars[j].is_ascii_digit() || chars[j] == '.' || chars[j] == ',')
                {
                    j += 1;
                }
                while !chars[j - 1].is_ascii_digit() {
                    j -= 1;
                }
                tokens.push(chars[i..j].iter().collect());
                i = j;
            } else if c.is_alphanumeric() {
                // Word run; internal apostrophes and hyphens are kept, but a
                // token never ends on one.
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || is_word_connector(chars[j]))
                {
                    j += 1;
                }
                while !chars[j - 1].is_alphanumeric() {
                    j -= 1;
                }
                tokens.push(chars[i..j].iter().collect());
                i = j;
            } else {
                tokens.push(c.to_string());
                i += 1;
            }
        }
    }
    tokens
}

/// True for tokens shaped like numbers: digits with optional `.`/`,` interior.
pub fn is_numeric_token(token: &str) -> bool {
    !token.is_empty()
        && token.chars().next().unwrap().is_ascii_digit()
        && token
            .chars()
            .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

/// True for tokens without any alphanumeric character.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_alphanumeric)
}

fn abbreviation_before(text: &str, terminator_at: usize) -> bool {
    // The word immediately before the period, allowing interior periods so
    // "e.g" is recognized when its final dot is the candidate boundary.
    let head = &text[..terminator_at];
    let word: String = head
        .chars()
        .rev()
        .take_while(|c| c.is_alphanumeric() || *c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_matches('.');
    if word.is_empty() {
        return false;
    }
    let folded = word.to_lowercase();
    ABBREVIATIONS.iter().any(|a| *a == folded)
}

/// Split text into sentence spans (byte ranges into `text`).
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace or end of text,
/// unless the period belongs to a known abbreviation. Unterminated trailing
/// text forms a final sentence.
pub fn split_sentences(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    let bytes = text.as_bytes();
    let mut iter = text.char_indices().peekable();
    while let Some((pos, c)) = iter.next() {
        let is_terminator = matches!(c, '.' | '!' | '?');
        if !is_terminator {
            continue;
        }
        let end_of_char = pos + c.len_utf8();
        let followed_by_break = end_of_char >= bytes.len()
            || text[end_of_char..]
                .chars()
                .next()
                .map(char::is_whitespace)
                .unwrap_or(true);
        if !followed_by_break {
            continue;
        }
        if c == '.' && abbreviation_before(text, pos) {
            continue;
        }
        let span = trim_span(text, start..end_of_char);
        if !span.is_empty() {
            spans.push(span);
        }
        start = end_of_char;
    }
    let tail = trim_span(text, start..text.len());
    if !tail.is_empty() {
        spans.push(tail);
    }
    spans
}

fn trim_span(text: &str, range: Range<usize>) -> Range<usize> {
    let slice = &text[range.clone()];
    let leading = slice.len() - slice.trim_start().len();
    let trailing = slice.len() - slice.trim_end().len();
    if leading + trailing >= slice.len() {
        return range.start..range.start;
    }
    (range.start + leading)..(range.end - trailing)
}

/// Count syllables as vowel groups (a, e, i, o, u, y), with a silent final
/// "e" correction and a floor of one.
///
/// Returns an error when the word has no alphabetic characters.
pub fn count_syllables(word: &str) -> Result<usize> {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if letters.is_empty() {
        return Err(Error::InvalidWord(word.to_string()));
    }
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        if is_vowel(c) {
            if !in_group {
                groups += 1;
            }
            in_group = true;
        } else {
            in_group = false;
        }
    }
    let n = letters.len();
    if letters[n - 1] == 'e' {
        // Final "e" is silent unless it forms a consonant-"le" ending.
        let consonant_le =
            n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]) && letters[n - 3] != 'l';
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    Ok(groups.max(1))
}

/// One essay: raw text plus its deterministic token and sentence structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Essay {
    pub id: String,
    pub text: String,
    pub label: Option<Level>,
    /// Tokens of `text`, in order.
    pub tokens: Vec<String>,
    /// Cumulative token count at the end of each sentence.
    pub sentence_ends: Vec<usize>,
}

impl Essay {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<Level>) -> Result<Essay> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Data("essay id must be non-empty".into()));
        }
        let text = text.into();
        let mut tokens = Vec::new();
        let mut sentence_ends = Vec::new();
        for span in split_sentences(&text) {
            let mut sentence_tokens = tokenize(&text[span]);
            tokens.append(&mut sentence_tokens);
            sentence_ends.push(tokens.len());
        }
        debug_assert_eq!(tokens, tokenize(&text));
        Ok(Essay {
            id,
            text,
            label,
            tokens,
            sentence_ends,
        })
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_ends.len()
    }

    /// Token slices for each sentence.
    pub fn sentences(&self) -> Vec<&[String]> {
        let mut out = Vec::with_capacity(self.sentence_ends.len());
        let mut start = 0;
        for &end in &self.sentence_ends {
            out.push(&self.tokens[start..end]);
            start = end;
        }
        out
    }
}

/// Per-token corpus statistics: document frequency and total occurrences,
/// keyed by case-folded token.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub counts: BTreeMap<String, TokenStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStats {
    pub doc_freq: u32,
    pub total: u32,
}

impl Vocabulary {
    pub fn from_essays<'a, I: IntoIterator<Item = &'a Essay>>(essays: I) -> Vocabulary {
        let mut counts: BTreeMap<String, TokenStats> = BTreeMap::new();
        for essay in essays {
            let mut seen = std::collections::BTreeSet::new();
            for token in &essay.tokens {
                let folded = token.to_lowercase();
                let entry = counts.entry(folded.clone()).or_default();
                entry.total += 1;
                if seen.insert(folded) {
                    entry.doc_freq += 1;
                }
            }
        }
        Vocabulary { counts }
    }

    pub fn total_count(&self, token_folded: &str) -> u32 {
        self.counts.get(token_folded).map(|s| s.total).unwrap_or(0)
    }
}

/// An ordered, immutable collection of essays with corpus statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub essays: Vec<Essay>,
    pub vocabulary: Vocabulary,
}

impl Dataset {
    pub fn from_essays(essays: Vec<Essay>) -> Result<Dataset> {
        let mut seen = std::collections::HashSet::new();
        for essay in &essays {
            if !seen.insert(essay.id.clone()) {
                return Err(Error::DuplicateId(essay.id.clone()));
            }
        }
        let vocabulary = Vocabulary::from_essays(&essays);
        Ok(Dataset { essays, vocabulary })
    }

    pub fn len(&self) -> usize {
        self.essays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.essays.is_empty()
    }

    /// True when every essay carries a label.
    pub fn fully_labeled(&self) -> bool {
        self.essays.iter().all(|e| e.label.is_some())
    }

    pub fn labels(&self) -> Option<Vec<Level>> {
        self.essays.iter().map(|e| e.label).collect()
    }
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
}

/// Load a dataset from a CSV file (header `id,text,label`, label optional)
/// or a JSON-lines file with the same field names. The format is detected
/// from the first non-whitespace byte.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::Resource {
        kind: "dataset",
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut contents = String::new();
    file.read_to_string(&mut contents)?;
    let first = contents.trim_start().chars().next();
    match first {
        Some('{') => parse_jsonl(&contents),
        _ => parse_csv(&contents),
    }
}

fn parse_label(raw: Option<&str>, row: usize) -> Result<Option<Level>> {
    match raw {
        None => Ok(None),
        Some(s) if s.is_empty() => Ok(None),
        Some(s) => s
            .parse::<Level>()
            .map(Some)
            .map_err(|_| Error::Label {
                row,
                value: s.to_string(),
            }),
    }
}

fn parse_csv(contents: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(contents.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad CSV header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| Error::Data("missing `id` column".into()))?;
    let text_col = find("text").ok_or_else(|| Error::Data("missing `text` column".into()))?;
    let label_col = find("label");

    let mut essays = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let id = record
            .get(id_col)
            .ok_or_else(|| Error::Data(format!("row {row}: missing id")))?;
        let text = record
            .get(text_col)
            .ok_or_else(|| Error::Data(format!("row {row}: missing text")))?;
        let label = parse_label(label_col.and_then(|c| record.get(c)), row)?;
        essays.push(Essay::new(id, text, label)?);
    }
    Dataset::from_essays(essays)
}

fn parse_jsonl(contents: &str) -> Result<Dataset> {
    let mut essays = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let label = parse_label(record.label.as_deref(), row)?;
        essays.push(Essay::new(record.id, record.text, label)?);
    }
    Dataset::from_essays(essays)
}

/// Write a dataset as CSV with the `id,text,label` schema.
pub fn write_dataset_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Data(e.to_string()))?;
    writer
        .write_record(["id", "text", "label"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for essay in &dataset.essays {
        let label = essay.label.map(|l| l.name()).unwrap_or("");
        writer
            .write_record([essay.id.as_str(), essay.text.as_str(), label])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
