//! Interpolated modified Kneser-Ney n-gram language models (order 1 to 3)
//! with count-of-counts discount estimation, plus the corpus preprocessing
//! they require and the per-essay likelihood features they produce.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_numeric_token, Vocabulary};
use crate::error::{Error, Result};

pub const SENT_BEGIN: &str = "<s>";
pub const SENT_END: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Token rewriting applied before language-model training and scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LMPreprocessConfig {
    /// Tokens seen fewer than this many times become their POS tag.
    pub rare_threshold: u32,
    pub number_token: String,
}

impl Default for LMPreprocessConfig {
    fn default() -> Self {
        LMPreprocessConfig {
            rare_threshold: 10,
            number_token: "<number>".to_string(),
        }
    }
}

/// Rewrite a token sequence for language modeling: numeric tokens become the
/// number token, tokens whose case-folded corpus count is below the rare
/// threshold become their uppercase POS tag, everything else is unchanged.
///
/// `tags` must align with `tokens` (one POS tag per token).
pub fn preprocess_for_lm(
    tokens: &[String],
    tags: &[String],
    vocab: &Vocabulary,
    config: &LMPreprocessConfig,
) -> Vec<String> {
    debug_assert_eq!(tokens.len(), tags.len());
    tokens
        .iter()
        .zip(tags)
        .map(|(token, tag)| {
            if is_numeric_token(token) {
                config.number_token.clone()
            } else if vocab.total_count(&token.to_lowercase()) < config.rare_threshold {
                tag.to_uppercase()
            } else {
                token.clone()
            }
        })
        .collect()
}

/// Per-order discounts for counts of 1, 2, and 3 or more.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// True when sparse count-of-counts forced the absolute-discount fallback.
    pub fallback: bool,
}

const FALLBACK_DISCOUNT: f64 = 0.75;
/// Upper clip keeping discounts strictly below 1.
const MAX_DISCOUNT: f64 = 1.0 - 1e-9;

/// Estimate discounts from count-of-counts `n[k-1]` = number of n-grams seen
/// exactly k times (k = 1..4): D_k = k − (k+1)·Y·n_{k+1}/n_k with
/// Y = n_1/(n_1+2·n_2), each clipped into [0, 1). Any zero bucket forces the
/// 0.75 absolute-discount fallback.
pub fn estimate_discounts(n: [u64; 4]) -> Discounts {
    if n.iter().any(|&x| x == 0) {
        return Discounts {
            d1: FALLBACK_DISCOUNT,
            d2: FALLBACK_DISCOUNT,
            d3: FALLBACK_DISCOUNT,
            fallback: true,
        };
    }
    let y = n[0] as f64 / (n[0] as f64 + 2.0 * n[1] as f64);
    let d = |k: usize| {
        let raw = k as f64 - (k as f64 + 1.0) * y * n[k] as f64 / n[k - 1] as f64;
        raw.clamp(0.0, MAX_DISCOUNT)
    };
    Discounts {
        d1: d(1),
        d2: d(2),
        d3: d(3),
        fallback: false,
    }
}

impl Discounts {
    fn for_count(&self, count: u32) -> f64 {
        match count {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3,
        }
    }
}

/// Aggregates for one conditioning context: total continuation mass and the
/// number of distinct continuations seen once, twice, and three-plus times.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct CtxStats {
    total: u64,
    n1: u32,
    n2: u32,
    n3p: u32,
}

impl CtxStats {
    fn backoff_mass(&self, d: &Discounts) -> f64 {
        (d.d1 * self.n1 as f64 + d.d2 * self.n2 as f64 + d.d3 * self.n3p as f64)
            / self.total as f64
    }
}

/// Result of scoring one essay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmScore {
    pub total_log10: f64,
    pub tokens: usize,
    pub per_token_log10: f64,
}

/// Interpolated modified Kneser-Ney model.
///
/// Top-order counts are raw; each lower order holds continuation counts
/// (distinct left extensions), except n-grams starting at a sentence begin
/// marker, which keep raw counts because no left extension can exist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageModel {
    pub order: usize,
    /// Predictable vocabulary: includes the end marker and `<unk>`, never the
    /// begin marker.
    vocab: BTreeSet<String>,
    /// counts[o-1]: o-gram → count.
    counts: Vec<BTreeMap<Vec<String>, u32>>,
    /// ctx[o-1]: (o-1)-token context → continuation aggregates.
    ctx: Vec<BTreeMap<Vec<String>, CtxStats>>,
    discounts: Vec<Discounts>,
    pub warnings: Vec<String>,
}

/// Train a model of the given order (1 to 3) on preprocessed sentences.
/// Tokens occurring exactly once across the corpus are replaced by `<unk>`
/// so unseen words receive probability mass at scoring time.
pub fn train_kn(sentences: &[Vec<String>], order: usize) -> Result<LanguageModel> {
    if !(1..=3).contains(&order) {
        return Err(Error::Config(format!("unsupported model order {order}")));
    }
    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::Data("language model corpus is empty".into()));
    }
    if total_tokens < order {
        return Err(Error::Data(format!(
            "language model corpus has {total_tokens} tokens, fewer than order {order}"
        )));
    }

    let mut freq: BTreeMap<&str, u32> = BTreeMap::new();
    for sentence in sentences {
        for token in sentence {
            *freq.entry(token.as_str()).or_default() += 1;
        }
    }
    let map_token = |t: &str| -> String {
        if freq.get(t).copied().unwrap_or(0) <= 1 {
            UNK.to_string()
        } else {
            t.to_string()
        }
    };

    let mut vocab: BTreeSet<String> = BTreeSet::new();
    vocab.insert(SENT_END.to_string());
    vocab.insert(UNK.to_string());

    let mut counts: Vec<BTreeMap<Vec<String>, u32>> = vec![BTreeMap::new(); order];
    for sentence in sentences {
        if sentence.is_empty() {
            continue;
        }
        let mut padded: Vec<String> = Vec::with_capacity(sentence.len() + order);
        for _ in 0..order.saturating_sub(1) {
            padded.push(SENT_BEGIN.to_string());
        }
        for token in sentence {
            let mapped = map_token(token);
            vocab.insert(mapped.clone());
            padded.push(mapped);
        }
        padded.push(SENT_END.to_string());
        for window in padded.windows(order) {
            *counts[order - 1].entry(window.to_vec()).or_default() += 1;
        }
    }

    // Lower orders from the suffixes of the order above. A suffix whose first
    // token is the begin marker accumulates raw counts (its only possible
    // left extension is another begin marker); everything else counts
    // distinct left extensions.
    for o in (1..order).rev() {
        let (lower_slice, upper_slice) = counts.split_at_mut(o);
        let lower = &mut lower_slice[o - 1];
        for (gram, &c) in upper_slice[0].iter() {
            let suffix = gram[1..].to_vec();
            let increment = if suffix[0] == SENT_BEGIN { c } else { 1 };
            *lower.entry(suffix).or_default() += increment;
        }
    }

    let mut discounts = Vec::with_capacity(order);
    let mut warnings = Vec::new();
    for o in 1..=order {
        let mut n = [0u64; 4];
        for &c in counts[o - 1].values() {
            if (1..=4).contains(&c) {
                n[c as usize - 1] += 1;
            }
        }
        let d = estimate_discounts(n);
        if d.fallback {
            warnings.push(format!(
                "order {o}: sparse count-of-counts {n:?}; using absolute discount {FALLBACK_DISCOUNT}"
            ));
        }
        discounts.push(d);
    }

    let mut ctx: Vec<BTreeMap<Vec<String>, CtxStats>> = vec![BTreeMap::new(); order];
    for o in 1..=order {
        for (gram, &c) in counts[o - 1].iter() {
            let stats = ctx[o - 1].entry(gram[..o - 1].to_vec()).or_default();
            stats.total += c as u64;
            match c {
                1 => stats.n1 += 1,
                2 => stats.n2 += 1,
                _ => stats.n3p += 1,
            }
        }
    }

    Ok(LanguageModel {
        order,
        vocab,
        counts,
        ctx,
        discounts,
        warnings,
    })
}

impl LanguageModel {
    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn contexts(&self, order: usize) -> impl Iterator<Item = &[String]> {
        self.ctx[order - 1].keys().map(Vec::as_slice)
    }

    fn map<'a>(&self, token: &'a str) -> &'a str {
        if token == SENT_BEGIN || self.vocab.contains(token) {
            token
        } else {
            UNK
        }
    }

    /// p(word | context) at the model's full order. Unknown tokens map to
    /// `<unk>`; only the rightmost order−1 context tokens are used.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let word = self.map(word);
        let start = context.len().saturating_sub(self.order - 1);
        let ctx: Vec<String> = context[start..].iter().map(|t| self.map(t).to_string()).collect();
        self.prob_at(ctx.len() + 1, &ctx, word)
    }

    /// The interpolation chain: discounted maximum likelihood at order `o`
    /// plus back-off mass times the next-lower estimate; unseen contexts fall
    /// through undamped. Order 0 is uniform over the vocabulary. Public so
    /// individual interpolation levels can be inspected and verified.
    pub fn prob_at(&self, o: usize, context: &[String], word: &str) -> f64 {
        if o == 0 {
            return 1.0 / self.vocab.len() as f64;
        }
        let key = &context[context.len() - (o - 1)..];
        let stats = match self.ctx[o - 1].get(key) {
            Some(s) => *s,
            None => return self.prob_at(o - 1, context, word),
        };
        let mut gram: Vec<String> = key.to_vec();
        gram.push(word.to_string());
        let c = self.counts[o - 1].get(&gram).copied().unwrap_or(0);
        let d = &self.discounts[o - 1];
        let discounted = (c as f64 - d.for_count(c)).max(0.0) / stats.total as f64;
        discounted + stats.backoff_mass(d) * self.prob_at(o - 1, context, word)
    }

    pub fn log10_prob(&self, context: &[&str], word: &str) -> f64 {
        self.prob(context, word).log10()
    }

    /// Score sentences at the model's full order.
    pub fn score(&self, sentences: &[Vec<String>]) -> Result<LmScore> {
        self.score_with_order(sentences, self.order)
    }

    /// Score with the context capped at `order − 1` previous tokens, padding
    /// with that many begin markers. Capping a trigram model at order 2
    /// reproduces a bigram model trained on the same corpus when the
    /// continuation counts coincide with raw counts.
    pub fn score_with_order(&self, sentences: &[Vec<String>], order: usize) -> Result<LmScore> {
        if order == 0 || order > self.order {
            return Err(Error::Config(format!(
                "scoring order {order} outside 1..={}",
                self.order
            )));
        }
        let tokens: usize = sentences.iter().map(Vec::len).sum();
        if tokens == 0 {
            return Err(Error::Degenerate("essay has no scorable tokens".into()));
        }
        let mut total = 0.0;
        for sentence in sentences {
            if sentence.is_empty() {
                continue;
            }
            let mut seq: Vec<String> = Vec::with_capacity(sentence.len() + order);
            for _ in 0..order - 1 {
                seq.push(SENT_BEGIN.to_string());
            }
            for t in sentence {
                seq.push(self.map(t).to_string());
            }
            seq.push(SENT_END.to_string());
            for i in order - 1..seq.len() {
                let context = &seq[i + 1 - order..i];
                let p = self.prob_at(order, context, &seq[i]);
                total += p.log10();
            }
        }
        Ok(LmScore {
            total_log10: total,
            tokens,
            per_token_log10: total / tokens as f64,
        })
    }

    /// Plain-text dump: one line per stored n-gram with its conditional
    /// log10 probability and, for n-grams that also act as contexts, the
    /// log10 back-off mass.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for o in 1..=self.order {
            out.push_str(&format!("\\{o}-grams: {}\n", self.counts[o - 1].len()));
            for gram in self.counts[o - 1].keys() {
                let context: Vec<&str> = gram[..o - 1].iter().map(String::as_str).collect();
                let lp = self.log10_prob(&context, &gram[o - 1]);
                let backoff = if o < self.order {
                    self.ctx[o]
                        .get(gram)
                        .map(|s| s.backoff_mass(&self.discounts[o]).log10())
                } else {
                    None
                };
                match backoff {
                    Some(b) => out.push_str(&format!("{lp:.6}\t{}\t{b:.6}\n", gram.join(" "))),
                    None => out.push_str(&format!("{lp:.6}\t{}\n", gram.join(" "))),
                }
            }
        }
        out
    }
}

/// Per-essay likelihood features: per-token log10 probability under the
/// low-level and high-level models and their difference (high − low).
/// Each sentence list must already be preprocessed with the matching
/// model's own training-vocabulary counts.
pub fn lm_features(
    lm_low: &LanguageModel,
    lm_high: &LanguageModel,
    sentences_low: &[Vec<String>],
    sentences_high: &[Vec<String>],
) -> Result<[f64; 3]> {
    let low = lm_low.score(sentences_low)?;
    let high = lm_high.score(sentences_high)?;
    Ok([
        low.per_token_log10,
        high.per_token_log10,
        high.per_token_log10 - low.per_token_log10,
    ])
}
