//! The learning substrate shared by every pattern: flat parameter vectors,
//! synthetic client datasets, mini-batch SGD with an optional proximal
//! anchor, and evaluation.

mod dataset;
mod params;
mod synthetic;
mod train;

pub use dataset::{Dataset, TaskKind};
pub use params::ParamVector;
pub use synthetic::{generate_partitions, generate_task, SyntheticSpec, SyntheticTask};
pub use train::{
    analytic_gradient, evaluate, gradient_check, local_train, mean_loss, EvalReport,
    TrainingConfig,
};
