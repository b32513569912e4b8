//! Comment moderation with recurrent classifiers, attention, word-list and
//! CNN baselines, threshold tuning, and a human review queue.

pub mod checkpoint;
pub mod error;
pub mod gradcore;
pub mod metrics;
pub mod models;
pub mod scorer;
pub mod service;
pub mod textpipe;
pub mod trainer;
pub mod tuner;

pub use error::{Error, Result};
pub use metrics::{EvalReport, Scored, ScoredSet};
pub use models::{Model, ModelConfig, Prediction, Variant, WordList};
pub use scorer::Scorer;
pub use service::{ItemStatus, Label, ModerationService, QueueItem, ServiceError};
pub use textpipe::{Comment, Vocabulary};
pub use trainer::{train, TrainConfig, TrainReport};
pub use tuner::{tune, Decision, Thresholds};
