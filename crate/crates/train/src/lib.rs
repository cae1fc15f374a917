//! Training, evaluation, and verification for the dual-stream segmentation
//! network: flat-text run configuration, a fused cross-entropy + soft-Dice
//! loss, Adam, a structured append-only run log, checkpointing with exact
//! resume, and a finite-difference registry covering every differentiable
//! operation.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod runlog;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{Result, TrainError};
pub use gradcheck::{case_names, run_cases, CaseOutcome, GradCheckCase, GRADCHECK_TOL};
pub use loss::{seg_loss, LossParts, DICE_SMOOTHING};
pub use optim::{load_optim, save_optim, OptimState, TrainProgress};
pub use runlog::{read_runlog, LogRecord, RunLog, RUNLOG_NAME};
pub use trainer::{
    evaluate, infer, train, Aggregate, CaseEval, EvalOutcome, TrainOutcome, MODEL_BEST,
    MODEL_FINAL, MODEL_LATEST, OPTIM_LATEST,
};
