//! Forgetting-curve models for predicting a learner's probability of
//! recalling a vocabulary item.
//!
//! The crate covers the whole pipeline:
//!
//! - [`dataset`]: streaming ingestion of spaced-repetition review logs,
//!   lexeme parsing and seeded train/test splits.
//! - [`lexicon`]: psycholinguistic lexicons (complexity, concreteness,
//!   percent known, SUBTLEX frequency) and per-event feature vectors.
//! - [`model`]: the model ladder, from the Pimsleur and Leitner schedules
//!   through half-life regression to the neural variants.
//! - [`train`]: composite recall/half-life loss, exact gradients, SGD and a
//!   finite-difference gradient check.
//! - [`eval`]: MAE reports and hidden-layer weight export.
//! - [`synth`]: synthetic learners with known ground-truth curves.
//! - [`pipeline`] and [`config`]: end-to-end runs driven by a TOML config.
//!
//! ```
//! use fcurve_core::model::{recall_probability, Clip};
//!
//! let clip = Clip::default();
//! // one half-life elapsed
//! assert_eq!(recall_probability(4.0, 4.0, 1.0, &clip).unwrap(), 0.5);
//! ```

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod train;

pub use config::RunConfig;
pub use dataset::{ReviewEvent, SplitMode, SplitSpec};
pub use error::{Error, Result};
pub use eval::{EvalReport, HiddenWeightExport};
pub use lexicon::{FeatureExtractor, FeatureFlags, FeatureVector, LexicalFeatures, LexiconBundle};
pub use model::{Clip, ModelKind, ModelState, Prediction};
pub use train::{Hyperparameters, LossBreakdown, TrainingLog};
