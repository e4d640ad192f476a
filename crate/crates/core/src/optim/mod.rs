//! Loss, regularization, optimizers and the plateau scheduler.
//!
//! ```
//! use artfusion::optim::ClassWeights;
//!
//! let w = ClassWeights::from_counts(&[10, 30, 60]).unwrap();
//! assert_eq!(w.w, vec![10.0 / 3.0, 10.0 / 9.0, 5.0 / 9.0]);
//! ```

mod loss;
mod optimizer;
mod scheduler;

pub use loss::{cross_entropy_value, l2_penalty, l2_value, weighted_cross_entropy, ClassWeights, L2Scope};
pub use optimizer::{Adam, Optimizer, OptimizerConfig, OptimizerKind, Sgd};
pub use scheduler::{SchedulerConfig, SchedulerEvent, SchedulerState};

#[cfg(test)]
mod tests;
