//! Topic feature family: latent Dirichlet allocation fitted by collapsed
//! Gibbs sampling, with frozen-count inference for unseen documents and
//! concatenated per-document topic distributions as features.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic concentration.
    pub alpha: f64,
    /// Symmetric topic-word concentration.
    pub beta: f64,
    pub burn_in: usize,
    pub sample_every: usize,
    pub n_samples: usize,
    /// Tokens must appear in at least this many documents.
    pub min_df: u32,
    pub seed: u64,
}

impl LdaConfig {
    /// Conventional defaults for a given topic count: α = 50/T, β = 0.01,
    /// 200 burn-in sweeps, then 5 θ snapshots 10 sweeps apart.
    pub fn for_topics(topics: usize, seed: u64) -> LdaConfig {
        LdaConfig {
            topics,
            alpha: 50.0 / topics as f64,
            beta: 0.01,
            burn_in: 200,
            sample_every: 10,
            n_samples: 5,
            min_df: 2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::Config("topic count must be positive".into()));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if self.sample_every == 0 || self.n_samples == 0 {
            return Err(Error::Config(
                "sample_every and n_samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted LDA state: final count tables, per-token assignments, and the
/// snapshot-averaged document-topic distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    pub config: LdaConfig,
    /// Case-folded word → column id.
    pub vocab: BTreeMap<String, u32>,
    /// topic_word[t][w]: tokens of word w assigned to topic t.
    topic_word: Vec<Vec<u32>>,
    topic_totals: Vec<u64>,
    /// doc_topic[d][t] for kept documents; zero rows for excluded ones.
    doc_topic: Vec<Vec<u32>>,
    /// Final topic of every kept token, per document.
    assignments: Vec<Vec<u32>>,
    /// Snapshot-averaged θ; zero rows for excluded documents.
    theta: Vec<Vec<f64>>,
    excluded: Vec<bool>,
    pub warnings: Vec<String>,
    /// Corpus log-likelihood after each Gibbs sweep.
    pub log_likelihood: Vec<f64>,
}

fn fold_and_filter(doc: &[String], keep: impl Fn(&str) -> bool) -> Vec<String> {
    doc.iter()
        .filter(|t| t.chars().any(char::is_alphabetic))
        .map(|t| t.to_lowercase())
        .filter(|t| keep(t))
        .collect()
}

/// Fit by collapsed Gibbs sampling: p(z = t | rest) ∝
/// (n_dt + α)·(n_tw + β)/(n_t + Vβ). After `burn_in` sweeps, `n_samples`
/// θ snapshots are taken `sample_every` sweeps apart and averaged.
/// Documents left empty by vocabulary filtering are excluded with a warning
/// and keep an all-zero θ row.
pub fn fit_lda(docs: &[Vec<String>], config: &LdaConfig) -> Result<LdaModel> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::Data("topic model corpus is empty".into()));
    }

    // Vocabulary: case-folded alphabetic tokens in at least min_df docs.
    let mut df: BTreeMap<String, u32> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<String> = fold_and_filter(doc, |_| true);
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let vocab: BTreeMap<String, u32> = df
        .into_iter()
        .filter(|(_, c)| *c >= config.min_df)
        .enumerate()
        .map(|(i, (w, _))| (w, i as u32))
        .collect();
    let v = vocab.len();
    if v == 0 {
        return Err(Error::Data(
            "no vocabulary survives document-frequency filtering".into(),
        ));
    }

    let mut warnings = Vec::new();
    let mut excluded = vec![false; docs.len()];
    let word_docs: Vec<Vec<u32>> = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            let ids: Vec<u32> = fold_and_filter(doc, |t| vocab.contains_key(t))
                .iter()
                .map(|t| vocab[t])
                .collect();
            if ids.is_empty() {
                excluded[d] = true;
                warnings.push(format!("document {d} empty after vocabulary filtering"));
            }
            ids
        })
        .collect();
    if word_docs.iter().all(Vec::is_empty) {
        return Err(Error::Data(
            "every document is empty after vocabulary filtering".into(),
        ));
    }

    let t_count = config.topics;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut topic_word = vec![vec![0u32; v]; t_count];
    let mut topic_totals = vec![0u64; t_count];
    let mut doc_topic = vec![vec![0u32; t_count]; docs.len()];
    let mut assignments: Vec<Vec<u32>> = word_docs
        .iter()
        .enumerate()
        .map(|(d, words)| {
            words
                .iter()
                .map(|&w| {
                    let t = rng.gen_range(0..t_count);
                    topic_word[t][w as usize] += 1;
                    topic_totals[t] += 1;
                    doc_topic[d][t as usize] += 1;
                    t as u32
                })
                .collect()
        })
        .collect();

    let sweeps = config.burn_in + config.n_samples * config.sample_every;
    let mut theta_acc = vec![vec![0.0f64; t_count]; docs.len()];
    let mut snapshots = 0usize;
    let mut log_likelihood = Vec::with_capacity(sweeps);
    let vb = v as f64 * config.beta;
    let mut weights = vec![0.0f64; t_count];

    for sweep in 1..=sweeps {
        for d in 0..docs.len() {
            for (i, &w) in word_docs[d].iter().enumerate() {
                let w = w as usize;
                let old = assignments[d][i] as usize;
                topic_word[old][w] -= 1;
                topic_totals[old] -= 1;
                doc_topic[d][old] -= 1;

                let mut total = 0.0;
                for t in 0..t_count {
                    let weight = (doc_topic[d][t] as f64 + config.alpha)
                        * (topic_word[t][w] as f64 + config.beta)
                        / (topic_totals[t] as f64 + vb);
                    total += weight;
                    weights[t] = total;
                }
                let r = rng.gen::<f64>() * total;
                let new = weights.partition_point(|&cum| cum <= r).min(t_count - 1);

                assignments[d][i] = new as u32;
                topic_word[new][w] += 1;
                topic_totals[new] += 1;
                doc_topic[d][new] += 1;
            }
            debug_assert_eq!(
                doc_topic[d].iter().map(|&c| c as usize).sum::<usize>(),
                word_docs[d].len(),
                "count conservation broken at sweep {sweep}, doc {d}"
            );
        }

        log_likelihood.push(corpus_log_likelihood(
            &word_docs,
            &doc_topic,
            &topic_word,
            &topic_totals,
            config,
            v,
        ));

        if sweep > config.burn_in
            && (sweep - config.burn_in) % config.sample_every == 0
            && snapshots < config.n_samples
        {
            for d in 0..docs.len() {
                if excluded[d] {
                    continue;
                }
                let len = word_docs[d].len() as f64;
                for t in 0..t_count {
                    theta_acc[d][t] += (doc_topic[d][t] as f64 + config.alpha)
                        / (len + t_count as f64 * config.alpha);
                }
            }
            snapshots += 1;
        }
    }

    let theta: Vec<Vec<f64>> = theta_acc
        .into_iter()
        .map(|row| row.into_iter().map(|x| x / snapshots as f64).collect())
        .zip(&excluded)
        .map(|(row, &ex): (Vec<f64>, _)| if ex { vec![0.0; t_count] } else { row })
        .collect();

    Ok(LdaModel {
        config: config.clone(),
        vocab,
        topic_word,
        topic_totals,
        doc_topic,
        assignments,
        theta,
        excluded,
        warnings,
        log_likelihood,
    })
}

fn corpus_log_likelihood(
    word_docs: &[Vec<u32>],
    doc_topic: &[Vec<u32>],
    topic_word: &[Vec<u32>],
    topic_totals: &[u64],
    config: &LdaConfig,
    v: usize,
) -> f64 {
    let t_count = config.topics;
    let vb = v as f64 * config.beta;
    let ta = t_count as f64 * config.alpha;
    let mut ll = 0.0;
    for (d, words) in word_docs.iter().enumerate() {
        if words.is_empty() {
            continue;
        }
        let len = words.len() as f64;
        for &w in words {
            let mut p = 0.0;
            for t in 0..t_count {
                p += ((doc_topic[d][t] as f64 + config.alpha) / (len + ta))
                    * ((topic_word[t][w as usize] as f64 + config.beta)
                        / (topic_totals[t] as f64 + vb));
            }
            ll += p.ln();
        }
    }
    ll
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.config.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_docs(&self) -> usize {
        self.theta.len()
    }

    pub fn is_excluded(&self, doc: usize) -> bool {
        self.excluded[doc]
    }

    /// Snapshot-averaged topic distribution of a training document.
    pub fn theta(&self, doc: usize) -> &[f64] {
        &self.theta[doc]
    }

    /// Topic-word distributions φ_tw = (n_tw + β)/(n_t + Vβ).
    pub fn phi(&self) -> Vec<Vec<f64>> {
        let vb = self.vocab.len() as f64 * self.config.beta;
        self.topic_word
            .iter()
            .zip(&self.topic_totals)
            .map(|(row, &total)| {
                row.iter()
                    .map(|&c| (c as f64 + self.config.beta) / (total as f64 + vb))
                    .collect()
            })
            .collect()
    }

    /// Gibbs sampling for an unseen document with topic-word counts frozen;
    /// θ is averaged over the final quarter of the sweeps. Documents with no
    /// in-vocabulary tokens get the uniform distribution.
    pub fn infer_theta(&self, tokens: &[String], iters: usize, seed: u64) -> Vec<f64> {
        let t_count = self.config.topics;
        let words: Vec<u32> = fold_and_filter(tokens, |t| self.vocab.contains_key(t))
            .iter()
            .map(|t| self.vocab[t])
            .collect();
        if words.is_empty() || iters == 0 {
            return vec![1.0 / t_count as f64; t_count];
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vb = self.vocab.len() as f64 * self.config.beta;
        let alpha = self.config.alpha;
        let mut local = vec![0u32; t_count];
        let mut assign: Vec<usize> = words
            .iter()
            .map(|_| {
                let t = rng.gen_range(0..t_count);
                local[t] += 1;
                t
            })
            .collect();

        let len = words.len() as f64;
        let ta = t_count as f64 * alpha;
        let tail = (iters - iters / 4).max(1);
        let mut theta = vec![0.0f64; t_count];
        let mut averaged = 0usize;
        let mut weights = vec![0.0f64; t_count];
        for sweep in 1..=iters {
            for (i, &w) in words.iter().enumerate() {
                let old = assign[i];
                local[old] -= 1;
                let mut total = 0.0;
                for t in 0..t_count {
                    let weight = (local[t] as f64 + alpha)
                        * (self.topic_word[t][w as usize] as f64 + self.config.beta)
                        / (self.topic_totals[t] as f64 + vb);
                    total += weight;
                    weights[t] = total;
                }
                let r = rng.gen::<f64>() * total;
                let new = weights.partition_point(|&cum| cum <= r).min(t_count - 1);
                assign[i] = new;
                local[new] += 1;
            }
            if sweep >= tail {
                for t in 0..t_count {
                    theta[t] += (local[t] as f64 + alpha) / (len + ta);
                }
                averaged += 1;
            }
        }
        for t in theta.iter_mut() {
            *t /= averaged as f64;
        }
        theta
    }

    /// Per-topic top words with probabilities, for qualitative inspection.
    pub fn dump_topics(&self, top_n: usize) -> String {
        let phi = self.phi();
        let id_to_word: BTreeMap<u32, &str> =
            self.vocab.iter().map(|(w, &i)| (i, w.as_str())).collect();
        let mut out = String::new();
        for (t, row) in phi.iter().enumerate() {
            let mut ranked: Vec<(usize, f64)> =
                row.iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            out.push_str(&format!("topic {t}:"));
            for (w, p) in ranked.into_iter().take(top_n) {
                out.push_str(&format!(" {}={:.4}", id_to_word[&(w as u32)], p));
            }
            out.push('\n');
        }
        out
    }
}

/// Concatenate one document's θ across models, in ascending topic-count
/// order. Blocks of models that excluded the document are all zeros.
pub fn topic_features(models: &[&LdaModel], doc: usize) -> Vec<f64> {
    debug_assert!(models.windows(2).all(|m| m[0].topics() <= m[1].topics()));
    let mut out = Vec::with_capacity(models.iter().map(|m| m.topics()).sum());
    for model in models {
        out.extend_from_slice(model.theta(doc));
    }
    out
}

/// The same concatenation for an unseen document via frozen-count inference.
pub fn topic_features_infer(
    models: &[&LdaModel],
    tokens: &[String],
    iters: usize,
    seed: u64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(models.iter().map(|m| m.topics()).sum());
    for model in models {
        out.extend(model.infer_theta(tokens, iters, seed));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn words(raw: &str) -> Vec<String> {
        raw.split_whitespace().map(str::to_string).collect()
    }

    /// 2-group corpus with disjoint vocabularies: docs 0..n/2 draw from the
    /// "a*" words, the rest from "b*" words.
    fn two_topic_corpus(seed: u64, docs: usize, len: usize) -> Vec<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let group_a: Vec<String> = (0..10).map(|i| format!("alpha{i}")).collect();
        let group_b: Vec<String> = (0..10).map(|i| format!("bravo{i}")).collect();
        (0..docs)
            .map(|d| {
                let pool = if d < docs / 2 { &group_a } else { &group_b };
                (0..len)
                    .map(|_| pool.choose(&mut rng).unwrap().clone())
                    .collect()
            })
            .collect()
    }

    fn quick_config(topics: usize, seed: u64) -> LdaConfig {
        LdaConfig {
            topics,
            alpha: 0.1,
            beta: 0.01,
            burn_in: 60,
            sample_every: 5,
            n_samples: 4,
            min_df: 2,
            seed,
        }
    }

    #[test]
    fn single_topic_theta_is_exactly_one() {
        let corpus = two_topic_corpus(1, 10, 20);
        let model = fit_lda(&corpus, &quick_config(1, 7)).unwrap();
        for d in 0..corpus.len() {
            assert_eq!(model.theta(d), &[1.0]);
        }
    }

    #[test]
    fn disjoint_vocabularies_recover_generating_topics() {
        let docs = 40;
        let corpus = two_topic_corpus(3, docs, 50);
        let model = fit_lda(&corpus, &quick_config(2, 11)).unwrap();
        // Align topics to groups greedily by the first group's mass.
        let mass_a: f64 = (0..docs / 2).map(|d| model.theta(d)[0]).sum();
        let mass_b: f64 = (docs / 2..docs).map(|d| model.theta(d)[0]).sum();
        let (topic_a, topic_b) = if mass_a >= mass_b { (0, 1) } else { (1, 0) };
        let mean_on_generator: f64 = (0..docs)
            .map(|d| model.theta(d)[if d < docs / 2 { topic_a } else { topic_b }])
            .sum::<f64>()
            / docs as f64;
        assert!(
            mean_on_generator >= 0.9,
            "mass on generating topic only {mean_on_generator}"
        );
    }

    #[test]
    fn theta_rows_normalize_and_counts_conserve() {
        let corpus = two_topic_corpus(5, 20, 30);
        let model = fit_lda(&corpus, &quick_config(3, 13)).unwrap();
        for d in 0..corpus.len() {
            let sum: f64 = model.theta(d).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "theta row {d} sums to {sum}");
            // Every token of the (fully in-vocabulary) docs stays assigned.
            let assigned: usize = model.doc_topic[d].iter().map(|&c| c as usize).sum();
            assert_eq!(assigned, model.assignments[d].len());
            assert_eq!(assigned, corpus[d].len());
        }
        for row in model.phi() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn log_likelihood_window_averages_rise_early() {
        let corpus = two_topic_corpus(9, 40, 50);
        let mut config = quick_config(2, 17);
        config.burn_in = 60;
        let model = fit_lda(&corpus, &config).unwrap();
        // Three 10-sweep windows cover the first half of burn-in.
        let window = |i: usize| -> f64 {
            model.log_likelihood[i * 10..(i + 1) * 10].iter().sum::<f64>() / 10.0
        };
        assert!(window(1) >= window(0));
        assert!(window(2) >= window(1));
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let corpus = two_topic_corpus(21, 16, 25);
        let a = bincode::serialize(&fit_lda(&corpus, &quick_config(4, 23)).unwrap()).unwrap();
        let b = bincode::serialize(&fit_lda(&corpus, &quick_config(4, 23)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rare_words_are_filtered_and_empty_docs_excluded() {
        let mut corpus = two_topic_corpus(25, 12, 20);
        corpus.push(words("onlyonceword"));
        let model = fit_lda(&corpus, &quick_config(2, 29)).unwrap();
        let d = corpus.len() - 1;
        assert!(model.is_excluded(d));
        assert!(!model.warnings.is_empty());
        assert!(model.theta(d).iter().all(|&x| x == 0.0));
        assert!(!model.vocab.contains_key("onlyonceword"));
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(fit_lda(&[], &quick_config(2, 1)).is_err());
        let only_rare = vec![words("unique1"), words("unique2")];
        assert!(fit_lda(&only_rare, &quick_config(2, 1)).is_err());
    }

    #[test]
    fn inferring_training_document_recovers_theta() {
        let corpus = two_topic_corpus(31, 40, 50);
        let model = fit_lda(&corpus, &quick_config(2, 37)).unwrap();
        for d in [0, corpus.len() - 1] {
            let inferred = model.infer_theta(&corpus[d], 40, 41);
            let l1: f64 = inferred
                .iter()
                .zip(model.theta(d))
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(l1 <= 0.3, "doc {d}: L1 distance {l1}");
            let sum: f64 = inferred.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn inference_on_empty_document_is_uniform() {
        let corpus = two_topic_corpus(43, 12, 20);
        let model = fit_lda(&corpus, &quick_config(4, 47)).unwrap();
        let theta = model.infer_theta(&words("zzz qqq 123"), 30, 1);
        assert_eq!(theta, vec![0.25; 4]);
    }

    #[test]
    fn features_concatenate_in_ascending_topic_order() {
        let corpus = two_topic_corpus(51, 20, 30);
        let m2 = fit_lda(&corpus, &quick_config(2, 53)).unwrap();
        let m3 = fit_lda(&corpus, &quick_config(3, 59)).unwrap();
        let f = topic_features(&[&m2, &m3], 0);
        assert_eq!(f.len(), 5);
        assert_eq!(&f[..2], m2.theta(0));
        assert_eq!(&f[2..], m3.theta(0));

        let unseen = words("alpha0 alpha1 alpha2");
        let fi = topic_features_infer(&[&m2, &m3], &unseen, 30, 61);
        assert_eq!(fi.len(), 5);
        let block: f64 = fi[..2].iter().sum();
        assert!((block - 1.0).abs() < 1e-6);
    }

    #[test]
    fn topic_dump_lists_top_words() {
        let corpus = two_topic_corpus(63, 20, 30);
        let model = fit_lda(&corpus, &quick_config(2, 67)).unwrap();
        let dump = model.dump_topics(5);
        assert_eq!(dump.lines().count(), 2);
        assert!(dump.contains("topic 0:"));
        assert!(dump.lines().all(|l| l.split('=').count() == 6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn random_corpora_keep_invariants(seed in 0u64..500) {
            let corpus = two_topic_corpus(seed, 10, 15);
            let mut config = quick_config(3, seed ^ 0x9e37);
            config.burn_in = 10;
            config.n_samples = 2;
            let model = fit_lda(&corpus, &config).unwrap();
            for d in 0..corpus.len() {
                let sum: f64 = model.theta(d).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
            let theta = model.infer_theta(&corpus[0], 8, seed);
            let sum: f64 = theta.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
