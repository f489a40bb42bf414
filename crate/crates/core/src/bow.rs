//! Bag-of-words feature family: case-folded unigrams plus adjacent bigrams,
//! document-frequency filtered and idf-weighted, emitted as sparse vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted term index with smoothed idf weights. Columns are assigned in
/// lexicographic term order so the layout is reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vectorizer {
    /// term → column.
    pub vocabulary: BTreeMap<String, u32>,
    /// column → idf.
    pub idf: Vec<f64>,
    /// column → document frequency.
    pub doc_freq: Vec<u32>,
    pub min_df: u32,
    pub n_docs: usize,
    pub bigrams_only: bool,
}

fn terms_of(tokens: &[String], bigrams_only: bool, mut emit: impl FnMut(String)) {
    let folded: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    if !bigrams_only {
        for t in &folded {
            emit(t.clone());
        }
    }
    for pair in folded.windows(2) {
        emit(format!("{} {}", pair[0], pair[1]));
    }
}

/// Build the term index from training documents: keep terms whose document
/// frequency is at least `min_df`, weighting column t by
/// idf(t) = ln((1+N)/(1+df(t))) + 1.
pub fn fit_vectorizer(
    docs: &[Vec<String>],
    min_df: u32,
    bigrams_only: bool,
) -> Result<Vectorizer> {
    if docs.is_empty() {
        return Err(Error::Data("vectorizer corpus is empty".into()));
    }
    let mut df: BTreeMap<String, u32> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<String> = Vec::new();
        terms_of(doc, bigrams_only, |t| seen.push(t));
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len();
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::new();
    let mut doc_freq = Vec::new();
    for (term, count) in df {
        if count < min_df {
            continue;
        }
        vocabulary.insert(term, idf.len() as u32);
        idf.push(((1.0 + n as f64) / (1.0 + count as f64)).ln() + 1.0);
        doc_freq.push(count);
    }
    Ok(Vectorizer {
        vocabulary,
        idf,
        doc_freq,
        min_df,
        n_docs: n,
        bigrams_only,
    })
}

impl Vectorizer {
    pub fn width(&self) -> usize {
        self.idf.len()
    }

    /// tf·idf of the document's indexed terms, as (column, value) pairs
    /// sorted by column. Terms outside the index are ignored; there is no
    /// row normalization.
    pub fn transform(&self, tokens: &[String]) -> Vec<(u32, f64)> {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        terms_of(tokens, self.bigrams_only, |t| {
            if let Some(&col) = self.vocabulary.get(&t) {
                *tf.entry(col).or_default() += 1.0;
            }
        });
        tf.into_iter()
            .map(|(col, count)| (col, count * self.idf[col as usize]))
            .collect()
    }

    /// Audit dump: term, column, document frequency, idf; one line per term.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (term, &col) in &self.vocabulary {
            out.push_str(&format!(
                "{term}\t{col}\t{}\t{:.6}\n",
                self.doc_freq[col as usize], self.idf[col as usize]
            ));
        }
        out
    }
}
