//! Preference-data engineering and reward-model evaluation.
//!
//! * [`graph`] turns pairwise annotations into conflict-free partial rankings.
//! * [`metrics`] scores reward functions against those rankings.
//! * [`supervision`] schedules annotation tasks, filters machine verdicts with
//!   a trusted scorer, balances pairs by length and reports annotator bias.
//! * [`trainer`] fits a linear Bradley-Terry reward head over feature vectors.
//! * [`format`] and [`cli`] bind the stages together through JSON-lines files.
//!
//! Score- and training-related types are generic over the [`Scalar`] type; the
//! aliases below fix it to `f64`, which is what the file formats carry.

pub mod cli;
pub mod format;
pub mod graph;
pub mod metrics;
pub mod records;
pub mod rng;
pub mod scalar;
pub mod supervision;
pub mod synth;
pub mod trainer;

pub use graph::{PartialRanking, PreferenceGraph};
pub use records::{AnnotationRecord, ResponseIndex, ResponseRecord, Source, Verdict};
pub use scalar::Scalar;
pub use supervision::{AnnotationTask, PreferencePair};

pub type Scores = metrics::ScoreTable<f64>;
pub type Features = trainer::FeatureTable<f64>;
pub type FeatureRecord = trainer::FeatureRecord<f64>;
pub type RewardModel = trainer::LinearRewardModel<f64>;
pub type TrainingConfig = trainer::TrainingConfig<f64>;
pub type FilterOptions = supervision::FilterOptions<f64>;

pub type ScoresF32 = metrics::ScoreTable<f32>;
pub type FeaturesF32 = trainer::FeatureTable<f32>;
pub type RewardModelF32 = trainer::LinearRewardModel<f32>;
