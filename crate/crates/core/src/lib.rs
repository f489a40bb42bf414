//! Core library for CEFR level prediction: corpus handling, feature
//! extraction (readability, n-gram language models, word clusters, topics,
//! part-of-speech, bag-of-words), gradient-boosted tree and logistic
//! regression classifiers, and an ordinal evaluation harness.

pub mod bow;
pub mod clusters;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbt;
pub mod pos;
pub mod level;
pub mod linear;
pub mod lm;
pub mod model_io;
pub mod pipeline;
pub mod readability;
pub mod seed;
pub mod synth;
pub mod topics;

pub use corpus::{load_dataset, Dataset, Essay, Vocabulary};
pub use error::{Error, ModelFileError, Result};
pub use level::{Level, NUM_LEVELS};
