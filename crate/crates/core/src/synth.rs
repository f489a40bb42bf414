//! Synthetic essay generator for end-to-end exercises. Every lever that the
//! feature families measure is planted deliberately and scales with level:
//!
//! - sentence length grows linearly with level (the numeric family's
//!   strongest, most direct signal);
//! - topic words come from per-level vocabulary groups whose words get
//!   longer (more syllables) with the group index, mixed across a ±2 group
//!   window so lexical evidence alone cannot resolve neighboring levels;
//! - content words arrive in fixed two-word collocations drawn from a
//!   per-group inventory, giving n-gram models recurring sequences that
//!   generalize across essays instead of one-off word salad;
//! - function-word choice tilts from the first half of the closed-class
//!   inventory toward the second as level rises, separating the low and
//!   high label groups for language models without essay memorization;
//! - clause connectors and unique rare words appear at level-scaled rates.
//!
//! Alongside the dataset, the generator can emit the resource files the
//! pipeline consumes (dictionary, easy-word list, word embeddings, POS
//! lexicon) built from the same fixed vocabulary.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Essay};
use crate::error::{Error, Result};
use crate::level::{Level, NUM_LEVELS};

/// Level proportions matching the published corpus row sums.
pub const DEFAULT_LEVEL_DISTRIBUTION: [f64; NUM_LEVELS] =
    [0.4131, 0.2809, 0.1997, 0.0851, 0.0196, 0.0016];

/// The vocabulary is fixed (independent of the dataset seed) so resource
/// files stay valid across generated datasets.
const VOCAB_SEED: u64 = 0xC0FFEE;
const GROUP_SIZE: usize = 40;
const PHRASES_PER_GROUP: usize = 80;
const EMBED_DIM: usize = 8;

const FUNCTION_WORDS: [&str; 18] = [
    "the", "a", "of", "to", "and", "in", "it", "is", "was", "i", "he", "she", "they", "we",
    "that", "this", "with", "for",
];

const CONNECTORS: [&str; 8] = [
    "however",
    "therefore",
    "moreover",
    "consequently",
    "nevertheless",
    "furthermore",
    "although",
    "meanwhile",
];

/// Consonant-vowel syllables only, no 'e' or 'y', so the syllable counter
/// sees exactly one vowel run per syllable and no silent-e adjustment.
const SYNTH_CONSONANTS: &[u8] = b"bcdfgklmnprstvz";
const SYNTH_VOWELS: &[u8] = b"aiou";

pub struct SynthVocabulary {
    /// groups[g] holds words of 2+g syllables; essays at level l draw
    /// mostly from group l with spillover into neighbors.
    pub groups: Vec<Vec<String>>,
    /// phrases[g]: two-word collocations over group g's words. Content is
    /// emitted in these units, so the same word pairs recur corpus-wide.
    pub phrases: Vec<Vec<(String, String)>>,
    pub function_words: Vec<&'static str>,
    pub connectors: Vec<&'static str>,
}

pub fn synth_vocabulary() -> SynthVocabulary {
    let mut rng = ChaCha8Rng::seed_from_u64(VOCAB_SEED);
    let mut used: std::collections::BTreeSet<String> = FUNCTION_WORDS
        .iter()
        .chain(CONNECTORS.iter())
        .map(|w| w.to_string())
        .collect();
    let mut groups = Vec::with_capacity(NUM_LEVELS);
    for g in 0..NUM_LEVELS {
        let syllables = 2 + g;
        let mut group = Vec::with_capacity(GROUP_SIZE);
        while group.len() < GROUP_SIZE {
            let mut word = String::new();
            for _ in 0..syllables {
                word.push(SYNTH_CONSONANTS[rng.gen_range(0..SYNTH_CONSONANTS.len())] as char);
                word.push(SYNTH_VOWELS[rng.gen_range(0..SYNTH_VOWELS.len())] as char);
            }
            if rng.gen_bool(0.5) {
                word.push(SYNTH_CONSONANTS[rng.gen_range(0..SYNTH_CONSONANTS.len())] as char);
            }
            if used.insert(word.clone()) {
                group.push(word);
            }
        }
        groups.push(group);
    }
    let mut phrases = Vec::with_capacity(NUM_LEVELS);
    for group in &groups {
        let mut inventory = std::collections::BTreeSet::new();
        while inventory.len() < PHRASES_PER_GROUP {
            let a = &group[rng.gen_range(0..GROUP_SIZE)];
            let b = &group[rng.gen_range(0..GROUP_SIZE)];
            if a != b {
                inventory.insert((a.clone(), b.clone()));
            }
        }
        phrases.push(inventory.into_iter().collect::<Vec<_>>());
    }
    SynthVocabulary {
        groups,
        phrases,
        function_words: FUNCTION_WORDS.to_vec(),
        connectors: CONNECTORS.to_vec(),
    }
}

fn rare_rate(level: usize) -> f64 {
    0.002 + 0.003 * level as f64
}

/// Rank-weighted index draw: p(i) ∝ 1/(i+1)^power. Concentrating draws on
/// the first few entries makes the corpus formulaic, so held-out essays
/// reuse n-grams the training essays also produced.
fn zipf_index(n: usize, power: f64, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = (1..=n).map(|r| (r as f64).powf(-power)).sum();
    let mut draw = rng.gen::<f64>() * total;
    for i in 0..n {
        draw -= ((i + 1) as f64).powf(-power);
        if draw <= 0.0 {
            return i;
        }
    }
    n - 1
}

fn connector_rate(level: usize) -> f64 {
    0.02 + 0.025 * level as f64
}

fn mean_sentence_words(level: usize) -> f64 {
    6.0 + 2.2 * level as f64
}

pub fn gen_synthetic(
    distribution: &[f64; NUM_LEVELS],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("cannot generate an empty dataset".into()));
    }
    if distribution.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config(
            "level distribution entries must be non-negative".into(),
        ));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "level distribution must sum to 1 (got {total})"
        )));
    }

    let vocab = synth_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rare_counter = 0u64;
    let mut essays = Vec::with_capacity(n);

    for i in 0..n {
        let level_idx = sample_level(distribution, &mut rng);
        let text = gen_essay_text(&vocab, level_idx, &mut rng, &mut rare_counter);
        let level = Level::from_index(level_idx).expect("index below NUM_LEVELS");
        essays.push(Essay::new(format!("synth-{:05}", i + 1), text, Some(level))?);
    }
    Dataset::from_essays(essays)
}

fn sample_level(distribution: &[f64; NUM_LEVELS], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, &p) in distribution.iter().enumerate() {
        cumulative += p;
        if r < cumulative {
            return i;
        }
    }
    NUM_LEVELS - 1
}

fn gen_essay_text(
    vocab: &SynthVocabulary,
    level: usize,
    rng: &mut ChaCha8Rng,
    rare_counter: &mut u64,
) -> String {
    let n_sentences = rng.gen_range(4..=8) + level;
    let base_words = mean_sentence_words(level).round() as i64;
    let rare = rare_rate(level);
    let connector = connector_rate(level);

    // Content draws emit two words, the rest one, so this split keeps the
    // function:content word ratio near the 42:50 the single-word rates gave.
    let function = 0.627 * (1.0 - rare - connector);
    // A1 essays draw 85% of function words from the first half of the
    // inventory, C2 essays 15%; the tilt is what the low/high language
    // models can learn from unseen essays.
    let low_half_share = 0.85 - 0.14 * level as f64;
    let half = vocab.function_words.len() / 2;

    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let n_words = (base_words + rng.gen_range(-4..=4)).max(3) as usize;
        let mut words: Vec<String> = Vec::with_capacity(n_words + 1);
        while words.len() < n_words {
            let r: f64 = rng.gen();
            if r < rare {
                *rare_counter += 1;
                words.push(format!("xz{rare_counter}"));
            } else if r < rare + connector {
                words.push(vocab.connectors[rng.gen_range(0..vocab.connectors.len())].to_string());
            } else if r < rare + connector + function {
                // Rank-squared concentration within the half keeps the
                // word-to-word transitions formulaic.
                let pool = if rng.gen::<f64>() < low_half_share {
                    &vocab.function_words[..half]
                } else {
                    &vocab.function_words[half..]
                };
                words.push(pool[zipf_index(pool.len(), 2.0, rng)].to_string());
            } else {
                // A ±2 window centered on the level's own group; neighbors
                // overlap enough that content alone cannot pin the level.
                let shift: f64 = rng.gen();
                let offset = if shift < 0.15 {
                    -2
                } else if shift < 0.35 {
                    -1
                } else if shift < 0.65 {
                    0
                } else if shift < 0.85 {
                    1
                } else {
                    2
                };
                let group = (level as i64 + offset).clamp(0, NUM_LEVELS as i64 - 1) as usize;
                let (a, b) = &vocab.phrases[group][zipf_index(PHRASES_PER_GROUP, 1.0, rng)];
                words.push(a.clone());
                if words.len() < n_words {
                    words.push(b.clone());
                }
            }
        }
        if let Some(first) = words[0].get(0..1) {
            let capitalized = first.to_uppercase() + &words[0][1..];
            words[0] = capitalized;
        }
        sentences.push(words.join(" ") + ".");
    }
    sentences.join(" ")
}

pub struct ResourcePaths {
    pub dictionary: PathBuf,
    pub easy_words: PathBuf,
    pub embeddings: PathBuf,
    pub pos_lexicon: PathBuf,
}

/// Write the resource files derived from the fixed synthetic vocabulary:
/// a dictionary of every non-rare word (rare "xz..." tokens are left out so
/// they count as misspellings), the function words as the easy-word list,
/// embeddings clustered by vocabulary group, and a POS lexicon covering the
/// closed classes.
pub fn write_resources(dir: &Path) -> Result<ResourcePaths> {
    let vocab = synth_vocabulary();
    std::fs::create_dir_all(dir)?;

    let dictionary = dir.join("dictionary.txt");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&dictionary)?);
        for word in vocab
            .function_words
            .iter()
            .copied()
            .chain(vocab.connectors.iter().copied())
        {
            writeln!(out, "{word}")?;
        }
        for group in &vocab.groups {
            for word in group {
                writeln!(out, "{word}")?;
            }
        }
    }

    let easy_words = dir.join("easy_words.txt");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&easy_words)?);
        for word in &vocab.function_words {
            writeln!(out, "{word}")?;
        }
    }

    // One embedding per word: group words sit near 2 * one_hot(group),
    // function words near axis 6, connectors near axis 7, all with small
    // deterministic jitter. k-means recovers the groups from these.
    let embeddings = dir.join("embeddings.txt");
    {
        let mut rng = ChaCha8Rng::seed_from_u64(VOCAB_SEED ^ 0xE0B);
        let mut out = std::io::BufWriter::new(std::fs::File::create(&embeddings)?);
        let write_vec = |out: &mut dyn std::io::Write,
                             word: &str,
                             axis: usize,
                             rng: &mut ChaCha8Rng|
         -> std::io::Result<()> {
            let mut v = [0.0f64; EMBED_DIM];
            for (i, value) in v.iter_mut().enumerate() {
                *value = if i == axis { 2.0 } else { 0.0 } + rng.gen_range(-0.3..0.3);
            }
            let fields: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
            writeln!(out, "{word} {}", fields.join(" "))
        };
        for (g, group) in vocab.groups.iter().enumerate() {
            for word in group {
                write_vec(&mut out, word, g, &mut rng)?;
            }
        }
        for word in &vocab.function_words {
            write_vec(&mut out, word, 6, &mut rng)?;
        }
        for word in &vocab.connectors {
            write_vec(&mut out, word, 7, &mut rng)?;
        }
    }

    let pos_lexicon = dir.join("pos_lexicon.tsv");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&pos_lexicon)?);
        for (word, tag) in [
            ("the", "DET"),
            ("a", "DET"),
            ("that", "DET"),
            ("this", "DET"),
            ("i", "PRON"),
            ("he", "PRON"),
            ("she", "PRON"),
            ("they", "PRON"),
            ("we", "PRON"),
            ("it", "PRON"),
            ("of", "ADP"),
            ("to", "ADP"),
            ("in", "ADP"),
            ("with", "ADP"),
            ("for", "ADP"),
            ("and", "CONJ"),
            ("is", "AUX"),
            ("was", "AUX"),
        ] {
            writeln!(out, "{word}\t{tag}")?;
        }
        for word in &vocab.connectors {
            writeln!(out, "{word}\tADV")?;
        }
        // Content words get real lexicon entries cycling through the open
        // classes. Rare-word replacement in language-model preprocessing
        // then maps out-of-group words to tags the scoring model has rarely
        // seen, instead of collapsing everything onto the default NOUN.
        for group in &vocab.groups {
            for (i, word) in group.iter().enumerate() {
                let tag = ["NOUN", "VERB", "ADJ"][i % 3];
                writeln!(out, "{word}\t{tag}")?;
            }
        }
    }

    Ok(ResourcePaths {
        dictionary,
        easy_words,
        embeddings,
        pos_lexicon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::EmbeddingTable;
    use crate::pos::BaselineTagger;
    use crate::readability::LexicalResources;

    #[test]
    fn same_seed_is_byte_identical() {
        let a = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 50, 99).unwrap();
        let b = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 50, 99).unwrap();
        for (x, y) in a.essays.iter().zip(&b.essays) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.text, y.text);
            assert_eq!(x.label, y.label);
        }
        let c = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 50, 100).unwrap();
        assert!(a.essays.iter().zip(&c.essays).any(|(x, y)| x.text != y.text));
    }

    #[test]
    fn label_proportions_track_the_distribution() {
        let data = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 10_000, 5).unwrap();
        let mut counts = [0usize; NUM_LEVELS];
        for essay in &data.essays {
            counts[essay.label.unwrap().index()] += 1;
        }
        for (i, &count) in counts.iter().enumerate() {
            let observed = count as f64 / 10_000.0;
            assert!(
                (observed - DEFAULT_LEVEL_DISTRIBUTION[i]).abs() <= 0.02,
                "level {i}: observed {observed}, requested {}",
                DEFAULT_LEVEL_DISTRIBUTION[i]
            );
        }
    }

    #[test]
    fn words_per_sentence_rises_strictly_with_level() {
        let data = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 10_000, 21).unwrap();
        let mut words = [0usize; NUM_LEVELS];
        let mut sentences = [0usize; NUM_LEVELS];
        for essay in &data.essays {
            let idx = essay.label.unwrap().index();
            words[idx] += essay
                .tokens
                .iter()
                .filter(|t| t.chars().any(|c| c.is_alphanumeric()))
                .count();
            sentences[idx] += essay.sentence_ends.len();
        }
        let means: Vec<f64> = (0..NUM_LEVELS)
            .map(|i| words[i] as f64 / sentences[i] as f64)
            .collect();
        for pair in means.windows(2) {
            assert!(pair[1] > pair[0], "sentence-length means not increasing: {means:?}");
        }
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 0, 1).is_err());
        let mut bad = DEFAULT_LEVEL_DISTRIBUTION;
        bad[0] += 0.5;
        assert!(gen_synthetic(&bad, 10, 1).is_err());
        bad = DEFAULT_LEVEL_DISTRIBUTION;
        bad[1] = -bad[1];
        assert!(gen_synthetic(&bad, 10, 1).is_err());
    }

    #[test]
    fn every_token_is_known_or_globally_unique() {
        let data = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 300, 8).unwrap();
        let vocab = synth_vocabulary();
        let mut known: std::collections::BTreeSet<String> = vocab
            .function_words
            .iter()
            .chain(vocab.connectors.iter())
            .map(|w| w.to_string())
            .collect();
        for group in &vocab.groups {
            known.extend(group.iter().cloned());
        }
        for (token, stats) in &data.vocabulary.counts {
            if known.contains(token) || !token.chars().any(|c| c.is_alphabetic()) {
                continue;
            }
            assert!(
                stats.total == 1,
                "unknown token {token} appears {} times",
                stats.total
            );
            assert!(token.starts_with("xz"));
        }
    }

    #[test]
    fn resource_files_load_through_their_consumers() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_resources(dir.path()).unwrap();

        let dictionary = LexicalResources::load_word_list(&paths.dictionary).unwrap();
        let easy = LexicalResources::load_word_list(&paths.easy_words).unwrap();
        assert_eq!(dictionary.len(), 18 + 8 + 6 * GROUP_SIZE);
        assert!(easy.iter().all(|w| dictionary.contains(w)));

        let table = EmbeddingTable::load(&paths.embeddings).unwrap();
        assert_eq!(table.dim, EMBED_DIM);
        assert_eq!(table.len(), dictionary.len());

        let tagger = BaselineTagger::load(&paths.pos_lexicon).unwrap();
        let tags = crate::pos::Tagger::tag(
            &tagger,
            "x",
            &["The".to_string(), "however".to_string(), "word".to_string()],
        )
        .unwrap();
        assert_eq!(tags, vec!["DET", "ADV", "NOUN"]);
    }

    #[test]
    fn essay_ids_are_sequential_and_unique() {
        let data = gen_synthetic(&DEFAULT_LEVEL_DISTRIBUTION, 12, 3).unwrap();
        assert_eq!(data.essays[0].id, "synth-00001");
        assert_eq!(data.essays[11].id, "synth-00012");
    }

    #[test]
    fn vocabulary_groups_have_expected_syllable_counts() {
        let vocab = synth_vocabulary();
        for (g, group) in vocab.groups.iter().enumerate() {
            assert_eq!(group.len(), GROUP_SIZE);
            for word in group {
                assert_eq!(
                    crate::corpus::count_syllables(word).unwrap(),
                    2 + g,
                    "word {word} in group {g}"
                );
            }
        }
    }
}
