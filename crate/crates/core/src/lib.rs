//! Core of the vinnpruner workbench: a small forward-inference engine, magnitude
//! (MAP) and lookahead (LAP) pruning with per-layer ratios, manual mask edits, a
//! step timeline, evaluation metrics, feature maps and the archive formats.

pub mod engine;
pub mod error;
pub mod featuremaps;
pub mod fixtures;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod persistence;
pub mod prune;
pub mod session;
pub mod tensor;

pub use error::{Error, FieldError, Result};
pub use mask::{MaskSet, PruneMask};
pub use metrics::EvalReport;
pub use model::{Dataset, LayerKind, LayerSpec, Model};
pub use prune::{Algorithm, EditOp, MaskEdit, PruneSettings};
pub use session::{PruneStep, Session, StepSummary};
pub use tensor::Tensor;
