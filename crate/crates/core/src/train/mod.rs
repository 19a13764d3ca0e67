//! Loss, backpropagation through time, optimizers, the epoch loop with its
//! ablation modes, and a finite-difference gradient checker.

mod backward;
mod engine;
pub mod gradcheck;
mod loss;
mod optim;

pub use backward::{backward, GradEntry, Gradients};
pub use engine::{
    evaluate, summarize_delays, train, two_phase, Ablation, Dataset, DelaySummary, EpochRecord, Evaluation,
    TrainConfig, TrainingReport, TwoPhaseReport,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GroupCheck};
pub use loss::{loss_ce, loss_ce_grad, LossOutput};
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
