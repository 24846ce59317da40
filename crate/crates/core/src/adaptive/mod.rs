//! Adaptive structures attached to the L2: the dirty block index behind cache
//! rinsing and the PC-indexed reuse predictor behind L2 bypassing.

mod dbi;
mod predictor;

pub use dbi::{DbiDiscrepancy, DirtyBlockIndex};
pub use predictor::{Decision, PredictorConfig, PredictorTable, ReuseTracker, TrainingEvent};
