//! Desk-scale training demonstration: a minimal differentiable model that
//! outputs SSP maps, a synthetic multi-domain corpus, and the training and
//! evaluation loops.

pub mod conflict;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod scenario;
pub mod train;

pub use conflict::{gradient_conflict_report, ConflictReport};
pub use corpus::{make_corpus, ClipGeometry, Corpus, CorpusItem, DomainSpec};
pub use eval::{evaluate_hr, hr_metrics, predict_hr, HrMetrics};
pub use model::{Clip, ToyModel};
pub use train::{cosine_lr, train, Adam, EpochMetrics, TrainConfig, TrainOutcome};
