//! Training: minibatch SGD with learning-rate annealing, and Hessian-free
//! optimization whose dropout masks stay fixed for all CG iterations of an
//! HF iteration so the curvature operator CG sees is a single linear map.

mod cg;
mod hf;
mod log;
mod seeds;
mod sgd;

pub use cg::{
    progress_window, run_cg, CgOptions, CgTermination, CgTrace, CurvatureOperator, CG_TOLERANCE, PHI_ROUNDING,
};
pub use hf::{
    hf_step, hf_train, update_lambda, HfConfig, HfDropoutMode, HfProblem, HfResult, HfStep, HfStepOptions,
    NetworkHfProblem, CURVATURE_FRACTION, LAMBDA_INIT,
};
pub use log::{load_checkpoint, save_checkpoint, OptimizerState, TrainingLog, TrainingRecord};
pub use seeds::{assign_dropout_seeds, SeedRegistry};
pub use sgd::{sgd_train, SgdResult, SgdSchedule, StopReason};
