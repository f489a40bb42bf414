//! Feature assembly across the six families and end-to-end model training.
//!
//! A [`PipelineConfig`] names the enabled families, their resource files, and
//! every tunable. [`fit_pipeline`] fits each family on training data only;
//! [`transform_pipeline`] turns any essays into a [`FeatureMatrix`] with the
//! fitted layout. One global seed is fanned out per component through a keyed
//! hash, so toggling one family never shifts another family's randomness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bow::{fit_vectorizer, Vectorizer};
use crate::clusters::{kmeans, ClusterModel, EmbeddingTable};
use crate::corpus::{Dataset, Essay, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{BlockKind, FeatureLayout, FeatureMatrix};
use crate::gbt::{argmax, default_class_weights, train_gbt, GBTConfig, GBTModel, GossConfig};
use crate::level::{Level, NUM_LEVELS};
use crate::lm::{
    lm_features, preprocess_for_lm, train_kn, LMPreprocessConfig, LanguageModel,
};
use crate::pos::{pos_bow, BaselineTagger, ExternalTagger, Tagger, NUM_TAGS};
use crate::readability::{extract_numeric, LexicalResources, NUMERIC_FEATURE_NAMES};
use crate::seed::{derive_seed, ContentHasher};
use crate::topics::{fit_lda, topic_features, topic_features_infer, LdaConfig, LdaModel};

/// Feature families in canonical order — the order cumulative ablation adds
/// them. Matrix layout is independent: dense blocks tile before sparse ones.
pub const FAMILY_NAMES: [&str; 6] = ["numeric", "lm", "clusters", "topics", "pos", "bow"];

/// Which feature families participate in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyToggles {
    pub numeric: bool,
    pub lm: bool,
    pub topics: bool,
    pub clusters: bool,
    pub pos: bool,
    pub bow: bool,
}

impl Default for FamilyToggles {
    fn default() -> Self {
        FamilyToggles {
            numeric: true,
            lm: true,
            topics: true,
            clusters: true,
            pos: true,
            bow: true,
        }
    }
}

impl FamilyToggles {
    pub fn none() -> FamilyToggles {
        FamilyToggles {
            numeric: false,
            lm: false,
            topics: false,
            clusters: false,
            pos: false,
            bow: false,
        }
    }

    pub fn enabled(&self, family: &str) -> Result<bool> {
        match family {
            "numeric" => Ok(self.numeric),
            "lm" => Ok(self.lm),
            "topics" => Ok(self.topics),
            "clusters" => Ok(self.clusters),
            "pos" => Ok(self.pos),
            "bow" => Ok(self.bow),
            other => Err(Error::Config(format!(
                "unknown feature family {other:?} (expected one of {FAMILY_NAMES:?})"
            ))),
        }
    }

    pub fn set(&mut self, family: &str, on: bool) -> Result<()> {
        match family {
            "numeric" => self.numeric = on,
            "lm" => self.lm = on,
            "topics" => self.topics = on,
            "clusters" => self.clusters = on,
            "pos" => self.pos = on,
            "bow" => self.bow = on,
            other => {
                return Err(Error::Config(format!(
                    "unknown feature family {other:?} (expected one of {FAMILY_NAMES:?})"
                )))
            }
        }
        Ok(())
    }

    /// Enabled family names in canonical order.
    pub fn names(&self) -> Vec<&'static str> {
        FAMILY_NAMES
            .iter()
            .copied()
            .filter(|f| self.enabled(f).unwrap())
            .collect()
    }

    pub fn any(&self) -> bool {
        !self.names().is_empty()
    }
}

/// Resource files consumed by the families. All optional here; a family
/// errors at fit time if a file it needs is not configured.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceConfig {
    pub dictionary: Option<PathBuf>,
    pub easy_words: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    /// Precomputed `essay-id TAG TAG ...` lines; overrides the lexicon tagger.
    pub pos_tags: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmFamilyConfig {
    pub order: usize,
    /// Tokens seen fewer than this many times in the group corpus are
    /// replaced by their POS tag before language modeling.
    pub rare_threshold: u32,
}

impl Default for LmFamilyConfig {
    fn default() -> Self {
        LmFamilyConfig {
            order: 3,
            rare_threshold: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterFamilyConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Scale embedding vectors to unit length before clustering.
    pub normalize: bool,
}

impl Default for ClusterFamilyConfig {
    fn default() -> Self {
        ClusterFamilyConfig {
            k: 1000,
            max_iters: 100,
            tol: 1e-6,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicFamilyConfig {
    /// One model is fitted per entry; must be strictly increasing.
    pub topic_counts: Vec<usize>,
    pub burn_in: usize,
    pub sample_every: usize,
    pub n_samples: usize,
    pub min_df: u32,
    /// Document-topic concentration; `None` uses 50/T per model.
    pub alpha: Option<f64>,
    pub beta: f64,
    /// Gibbs sweeps when inferring mixtures for unseen documents.
    pub infer_iters: usize,
}

impl Default for TopicFamilyConfig {
    fn default() -> Self {
        TopicFamilyConfig {
            topic_counts: vec![30, 40, 50, 60],
            burn_in: 200,
            sample_every: 10,
            n_samples: 5,
            min_df: 2,
            alpha: None,
            beta: 0.01,
            infer_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowFamilyConfig {
    pub min_df: u32,
    pub bigrams_only: bool,
}

impl Default for BowFamilyConfig {
    fn default() -> Self {
        BowFamilyConfig {
            min_df: 2,
            bigrams_only: true,
        }
    }
}

/// Boosted-tree settings; expanded into a full training config once the
/// label set is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoosterConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_samples_leaf: usize,
    /// Weight training rows by inverse class frequency.
    pub class_weighting: bool,
    pub goss: Option<GossConfig>,
}

impl Default for BoosterConfig {
    fn default() -> Self {
        BoosterConfig {
            n_rounds: 4000,
            max_depth: 3,
            learning_rate: 0.06,
            lambda: 1.0,
            min_samples_leaf: 20,
            class_weighting: true,
            goss: None,
        }
    }
}

impl BoosterConfig {
    /// Expand into the tree trainer's config for the given training labels.
    pub fn to_gbt_config(&self, labels: &[usize], seed: u64) -> Result<GBTConfig> {
        let class_weights = if self.class_weighting {
            Some(default_class_weights(labels, NUM_LEVELS)?)
        } else {
            None
        };
        Ok(GBTConfig {
            n_classes: NUM_LEVELS,
            n_rounds: self.n_rounds,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            min_samples_leaf: self.min_samples_leaf,
            class_weights,
            goss: self.goss,
            seed,
        })
    }
}

/// Everything needed to fit and apply the full feature-extraction and
/// classification stack. Loadable from TOML; every field has a default, so a
/// config file only states what it changes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub families: FamilyToggles,
    pub resources: ResourceConfig,
    pub lm: LmFamilyConfig,
    pub clusters: ClusterFamilyConfig,
    pub topics: TopicFamilyConfig,
    pub bow: BowFamilyConfig,
    pub booster: BoosterConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config serializes to TOML")
    }

    /// Check every constraint that does not need data. Disabled families are
    /// not validated, so a config may zero out settings of families it turns
    /// off.
    pub fn validate(&self) -> Result<()> {
        if !self.families.any() {
            return Err(Error::Config(
                "at least one feature family must be enabled".into(),
            ));
        }
        if self.families.lm && self.lm.order == 0 {
            return Err(Error::Config("lm.order must be at least 1".into()));
        }
        if self.families.clusters {
            if self.clusters.k == 0 {
                return Err(Error::Config("clusters.k must be at least 1".into()));
            }
            if self.clusters.max_iters == 0 {
                return Err(Error::Config("clusters.max_iters must be at least 1".into()));
            }
            if !self.clusters.tol.is_finite() || self.clusters.tol < 0.0 {
                return Err(Error::Config(format!(
                    "clusters.tol must be non-negative (got {})",
                    self.clusters.tol
                )));
            }
        }
        if self.families.topics {
            let counts = &self.topics.topic_counts;
            if counts.is_empty() {
                return Err(Error::Config("topics.topic_counts must be non-empty".into()));
            }
            if counts[0] == 0 || counts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "topics.topic_counts must be positive and strictly increasing".into(),
                ));
            }
            if self.topics.sample_every == 0 || self.topics.n_samples == 0 {
                return Err(Error::Config(
                    "topics.sample_every and topics.n_samples must be at least 1".into(),
                ));
            }
            if let Some(a) = self.topics.alpha {
                if !a.is_finite() || a <= 0.0 {
                    return Err(Error::Config(format!(
                        "topics.alpha must be positive (got {a})"
                    )));
                }
            }
            if !self.topics.beta.is_finite() || self.topics.beta <= 0.0 {
                return Err(Error::Config(format!(
                    "topics.beta must be positive (got {})",
                    self.topics.beta
                )));
            }
        }
        if self.families.bow && self.bow.min_df == 0 {
            return Err(Error::Config("bow.min_df must be at least 1".into()));
        }
        if self.booster.n_rounds == 0 {
            return Err(Error::Config("booster.n_rounds must be at least 1".into()));
        }
        if self.booster.max_depth == 0 {
            return Err(Error::Config("booster.max_depth must be at least 1".into()));
        }
        if !self.booster.learning_rate.is_finite() || self.booster.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "booster.learning_rate must be positive (got {})",
                self.booster.learning_rate
            )));
        }
        if !self.booster.lambda.is_finite() || self.booster.lambda < 0.0 {
            return Err(Error::Config(format!(
                "booster.lambda must be non-negative (got {})",
                self.booster.lambda
            )));
        }
        if self.booster.min_samples_leaf == 0 {
            return Err(Error::Config(
                "booster.min_samples_leaf must be at least 1".into(),
            ));
        }
        if let Some(goss) = &self.booster.goss {
            goss.validate()?;
        }
        Ok(())
    }
}

/// Tagger selected by configuration: precomputed tags when supplied,
/// otherwise the lexicon-and-suffix baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AnyTagger {
    Baseline(BaselineTagger),
    External(ExternalTagger),
}

impl Tagger for AnyTagger {
    fn tag(&self, essay_id: &str, tokens: &[String]) -> Result<Vec<String>> {
        match self {
            AnyTagger::Baseline(t) => t.tag(essay_id, tokens),
            AnyTagger::External(t) => t.tag(essay_id, tokens),
        }
    }
}

/// The two group language models with the vocabulary counts each was
/// preprocessed against. Scoring a new essay repeats the same rewriting with
/// the matching model's counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LmFamily {
    low: LanguageModel,
    high: LanguageModel,
    vocab_low: Vocabulary,
    vocab_high: Vocabulary,
}

/// All fitted per-family state plus the feature layout it implies.
/// Constructed only by [`fit_pipeline`]; fields stay private so the
/// invariant "enabled family implies fitted state present" holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPipeline {
    config: PipelineConfig,
    layout: FeatureLayout,
    resources: Option<LexicalResources>,
    tagger: Option<AnyTagger>,
    lm: Option<LmFamily>,
    cluster_model: Option<ClusterModel>,
    topic_models: Vec<LdaModel>,
    /// Content hash of each training document's folded tokens → its row in
    /// the fitted topic models, so training essays reuse their fitted
    /// mixtures instead of re-running inference.
    theta_index: BTreeMap<u64, u32>,
    bow: Option<Vectorizer>,
}

impl FittedPipeline {
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn fingerprint(&self) -> u64 {
        self.layout.fingerprint()
    }

    pub fn topic_models(&self) -> &[LdaModel] {
        &self.topic_models
    }

    pub fn cluster_model(&self) -> Option<&ClusterModel> {
        self.cluster_model.as_ref()
    }

    pub fn vectorizer(&self) -> Option<&Vectorizer> {
        self.bow.as_ref()
    }
}

/// Content hash of a case-folded token sequence.
fn token_hash(tokens: &[String]) -> u64 {
    let mut hasher = ContentHasher::new();
    hasher.update_str("doc-tokens");
    for t in tokens {
        hasher.update_str(&t.to_lowercase());
    }
    hasher.finish()
}

/// Swap the kind of a resource error for one naming the family, keeping the
/// path and reason.
fn with_kind(err: Error, kind: &'static str) -> Error {
    match err {
        Error::Resource { path, reason, .. } => Error::Resource { kind, path, reason },
        other => other,
    }
}

fn require_path<'a>(path: &'a Option<PathBuf>, kind: &'static str) -> Result<&'a Path> {
    path.as_deref().ok_or(Error::Resource {
        kind,
        path: "(unset)".into(),
        reason: "no path configured for an enabled family".into(),
    })
}

fn load_tagger(resources: &ResourceConfig) -> Result<AnyTagger> {
    const KIND: &str = "POS tagger (lm/pos families)";
    if let Some(path) = &resources.pos_tags {
        let tagger = ExternalTagger::load(path).map_err(|e| with_kind(e, KIND))?;
        Ok(AnyTagger::External(tagger))
    } else {
        let path = require_path(&resources.pos_lexicon, KIND)?;
        let tagger = BaselineTagger::load(path).map_err(|e| with_kind(e, KIND))?;
        Ok(AnyTagger::Baseline(tagger))
    }
}

/// Split an essay's tokens and tags into per-sentence sequences rewritten
/// for language modeling against `vocab`.
fn lm_sentences(
    essay: &Essay,
    tags: &[String],
    vocab: &Vocabulary,
    config: &LMPreprocessConfig,
) -> Vec<Vec<String>> {
    let mut out = Vec::with_capacity(essay.sentence_count());
    let mut start = 0;
    for &end in &essay.sentence_ends {
        out.push(preprocess_for_lm(
            &essay.tokens[start..end],
            &tags[start..end],
            vocab,
            config,
        ));
        start = end;
    }
    out
}

/// Fit every enabled family on the training dataset. Nothing outside
/// `train` is observed, so cross-validation folds stay leak-free.
pub fn fit_pipeline(train: &Dataset, config: &PipelineConfig) -> Result<FittedPipeline> {
    config.validate()?;
    if train.essays.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let fam = &config.families;

    let tagger = if fam.lm || fam.pos {
        Some(load_tagger(&config.resources)?)
    } else {
        None
    };

    let resources = if fam.numeric {
        const DICT: &str = "dictionary (numeric family)";
        const EASY: &str = "easy-word list (numeric family)";
        let dict_path = require_path(&config.resources.dictionary, DICT)?;
        let easy_path = require_path(&config.resources.easy_words, EASY)?;
        let mut resources = LexicalResources {
            dictionary: LexicalResources::load_word_list(dict_path)
                .map_err(|e| with_kind(e, DICT))?,
            easy_words: LexicalResources::load_word_list(easy_path)
                .map_err(|e| with_kind(e, EASY))?,
            idf_table: BTreeMap::new(),
        };
        resources.fit_idf(train);
        Some(resources)
    } else {
        None
    };

    let lm = if fam.lm {
        let tagger = tagger.as_ref().expect("tagger present when lm enabled");
        let tags: Vec<Vec<String>> = train
            .essays
            .par_iter()
            .map(|e| tagger.tag(&e.id, &e.tokens))
            .collect::<Result<_>>()?;
        let mut low_idx: Vec<usize> = Vec::new();
        let mut high_idx: Vec<usize> = Vec::new();
        for (i, essay) in train.essays.iter().enumerate() {
            match essay.label {
                Some(level) if level.index() <= Level::B1.index() => low_idx.push(i),
                Some(_) => high_idx.push(i),
                None => {
                    return Err(Error::Data(format!(
                        "essay {:?} has no label; the lm family needs labeled training data",
                        essay.id
                    )))
                }
            }
        }
        if low_idx.is_empty() || high_idx.is_empty() {
            return Err(Error::Data(format!(
                "lm family needs essays in both level groups (A1-B1: {}, B2-C2: {})",
                low_idx.len(),
                high_idx.len()
            )));
        }
        let preprocess = LMPreprocessConfig {
            rare_threshold: config.lm.rare_threshold,
            ..LMPreprocessConfig::default()
        };
        let group = |idx: &[usize]| -> (Vocabulary, Vec<Vec<String>>) {
            let vocab = Vocabulary::from_essays(idx.iter().map(|&i| &train.essays[i]));
            let mut sentences = Vec::new();
            for &i in idx {
                sentences.extend(lm_sentences(
                    &train.essays[i],
                    &tags[i],
                    &vocab,
                    &preprocess,
                ));
            }
            (vocab, sentences)
        };
        let (vocab_low, sentences_low) = group(&low_idx);
        let (vocab_high, sentences_high) = group(&high_idx);
        Some(LmFamily {
            low: train_kn(&sentences_low, config.lm.order)?,
            high: train_kn(&sentences_high, config.lm.order)?,
            vocab_low,
            vocab_high,
        })
    } else {
        None
    };

    let cluster_model = if fam.clusters {
        const KIND: &str = "embeddings (clusters family)";
        let path = require_path(&config.resources.embeddings, KIND)?;
        let mut table = EmbeddingTable::load(path).map_err(|e| with_kind(e, KIND))?;
        if config.clusters.normalize {
            table.normalize();
        }
        // Cluster only words present in the training corpus, so membership
        // features reflect this corpus rather than the embedding vocabulary.
        table
            .vectors
            .retain(|word, _| train.vocabulary.counts.contains_key(&word.to_lowercase()));
        if table.is_empty() {
            return Err(Error::Data(
                "no embedding words overlap the training vocabulary".into(),
            ));
        }
        Some(kmeans(
            &table,
            config.clusters.k,
            derive_seed(config.seed, "clusters"),
            config.clusters.max_iters,
            config.clusters.tol,
        )?)
    } else {
        None
    };

    let docs: Vec<Vec<String>> = if fam.topics || fam.bow {
        train.essays.iter().map(|e| e.tokens.clone()).collect()
    } else {
        Vec::new()
    };

    let (topic_models, theta_index) = if fam.topics {
        let configs: Vec<LdaConfig> = config
            .topics
            .topic_counts
            .iter()
            .map(|&t| {
                let mut lda = LdaConfig::for_topics(t, derive_seed(config.seed, &format!("topics-{t}")));
                lda.burn_in = config.topics.burn_in;
                lda.sample_every = config.topics.sample_every;
                lda.n_samples = config.topics.n_samples;
                lda.min_df = config.topics.min_df;
                lda.beta = config.topics.beta;
                if let Some(alpha) = config.topics.alpha {
                    lda.alpha = alpha;
                }
                lda
            })
            .collect();
        let models: Vec<LdaModel> = configs
            .par_iter()
            .map(|lda| fit_lda(&docs, lda))
            .collect::<Result<_>>()?;
        let mut index = BTreeMap::new();
        for (i, essay) in train.essays.iter().enumerate() {
            index.entry(token_hash(&essay.tokens)).or_insert(i as u32);
        }
        (models, index)
    } else {
        (Vec::new(), BTreeMap::new())
    };

    let bow = if fam.bow {
        Some(fit_vectorizer(
            &docs,
            config.bow.min_df,
            config.bow.bigrams_only,
        )?)
    } else {
        None
    };

    let mut blocks: Vec<(&str, BlockKind, usize)> = Vec::new();
    if fam.numeric {
        blocks.push(("numeric", BlockKind::Dense, NUMERIC_FEATURE_NAMES.len()));
    }
    if fam.lm {
        blocks.push(("lm", BlockKind::Dense, 3));
    }
    if fam.topics {
        let width = config.topics.topic_counts.iter().sum();
        blocks.push(("topics", BlockKind::Dense, width));
    }
    if fam.clusters {
        blocks.push(("clusters", BlockKind::Sparse, config.clusters.k));
    }
    if fam.pos {
        blocks.push(("pos", BlockKind::Sparse, NUM_TAGS));
    }
    if fam.bow {
        let width = bow.as_ref().unwrap().width();
        blocks.push(("bow", BlockKind::Sparse, width));
    }
    let layout = FeatureLayout::new(&blocks);

    Ok(FittedPipeline {
        config: config.clone(),
        layout,
        resources,
        tagger,
        lm,
        cluster_model,
        topic_models,
        theta_index,
        bow,
    })
}

/// One essay's dense block and sparse entries in layout order.
fn essay_row(essay: &Essay, pipe: &FittedPipeline) -> Result<(Vec<f64>, Vec<(u32, f64)>)> {
    let fam = &pipe.config.families;
    let mut dense = Vec::with_capacity(pipe.layout.dense_width);
    let mut sparse: Vec<(u32, f64)> = Vec::new();

    let tags = if (fam.lm || fam.pos) && !essay.tokens.is_empty() {
        let tagger = pipe.tagger.as_ref().expect("tagger present when lm/pos enabled");
        Some(tagger.tag(&essay.id, &essay.tokens)?)
    } else {
        None
    };

    if fam.numeric {
        let resources = pipe.resources.as_ref().expect("resources present when numeric enabled");
        dense.extend(extract_numeric(essay, resources).values);
    }

    if fam.lm {
        if essay.tokens.is_empty() {
            // Nothing to score; zeros are outside the range of real scores,
            // which are always negative log probabilities.
            dense.extend([0.0; 3]);
        } else {
            let lm = pipe.lm.as_ref().expect("lm models present when lm enabled");
            let tags = tags.as_ref().expect("tags computed for non-empty essay");
            let preprocess = LMPreprocessConfig {
                rare_threshold: pipe.config.lm.rare_threshold,
                ..LMPreprocessConfig::default()
            };
            let low = lm_sentences(essay, tags, &lm.vocab_low, &preprocess);
            let high = lm_sentences(essay, tags, &lm.vocab_high, &preprocess);
            dense.extend(lm_features(&lm.low, &lm.high, &low, &high)?);
        }
    }

    if fam.topics {
        let models: Vec<&LdaModel> = pipe.topic_models.iter().collect();
        let theta = match pipe.theta_index.get(&token_hash(&essay.tokens)) {
            Some(&doc) => topic_features(&models, doc as usize),
            None => topic_features_infer(
                &models,
                &essay.tokens,
                pipe.config.topics.infer_iters,
                derive_seed(pipe.config.seed, "topics-infer"),
            ),
        };
        dense.extend(theta);
    }

    if fam.clusters {
        let model = pipe.cluster_model.as_ref().expect("clusters fitted when enabled");
        let offset = pipe.layout.block("clusters").unwrap().offset as u32;
        for c in model.active_clusters(essay) {
            sparse.push((offset + c, 1.0));
        }
    }

    if fam.pos {
        let offset = pipe.layout.block("pos").unwrap().offset as u32;
        if let Some(tags) = &tags {
            for (i, count) in pos_bow(tags)?.iter().enumerate() {
                if *count != 0.0 {
                    sparse.push((offset + i as u32, *count));
                }
            }
        }
    }

    if fam.bow {
        let vectorizer = pipe.bow.as_ref().expect("vectorizer fitted when bow enabled");
        let offset = pipe.layout.block("bow").unwrap().offset as u32;
        for (col, value) in vectorizer.transform(&essay.tokens) {
            sparse.push((offset + col, value));
        }
    }

    Ok((dense, sparse))
}

/// Extract features for any essays with a fitted pipeline. Pure: fitted
/// state is never updated, and transforming the same essays twice gives
/// identical matrices.
pub fn transform_pipeline(essays: &[Essay], pipe: &FittedPipeline) -> Result<FeatureMatrix> {
    let rows: Vec<(Vec<f64>, Vec<(u32, f64)>)> = essays
        .par_iter()
        .map(|essay| essay_row(essay, pipe))
        .collect::<Result<_>>()?;
    let mut matrix = FeatureMatrix::new(pipe.layout.clone());
    for (dense, sparse) in rows {
        matrix.push_row(&dense, sparse)?;
    }
    Ok(matrix)
}

/// Class indices of a fully labeled dataset, in essay order.
pub fn dataset_labels(dataset: &Dataset) -> Result<Vec<usize>> {
    dataset
        .essays
        .iter()
        .map(|essay| {
            essay.label.map(|l| l.index()).ok_or_else(|| {
                Error::Data(format!("essay {:?} has no label", essay.id))
            })
        })
        .collect()
}

/// Fit the pipeline and train the boosted-tree classifier on one dataset.
pub fn train_model(train: &Dataset, config: &PipelineConfig) -> Result<(FittedPipeline, GBTModel)> {
    let labels = dataset_labels(train)?;
    let pipeline = fit_pipeline(train, config)?;
    let matrix = transform_pipeline(&train.essays, &pipeline)?;
    let gbt_config = config
        .booster
        .to_gbt_config(&labels, derive_seed(config.seed, "gbt"))?;
    let model = train_gbt(&matrix, &labels, &gbt_config)?;
    Ok((pipeline, model))
}

/// Transform and classify, returning each essay's predicted level and its
/// per-level probabilities in A1..C2 order.
pub fn predict_pipeline(
    essays: &[Essay],
    pipe: &FittedPipeline,
    model: &GBTModel,
) -> Result<Vec<(Level, Vec<f64>)>> {
    let matrix = transform_pipeline(essays, pipe)?;
    model.check_fingerprint(matrix.fingerprint())?;
    let proba = model.predict_proba_all(&matrix)?;
    Ok(proba
        .into_iter()
        .map(|p| {
            let level = Level::from_index(argmax(&p)).expect("6-class probabilities");
            (level, p)
        })
        .collect())
}
