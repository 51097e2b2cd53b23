//! Minimal feedforward network engine: dense layers, four classification
//! losses, and mini-batch backprop with Adam or SGD.

mod loss;
mod model;
mod optim;
mod train;

pub use loss::{huber, log_sum_exp, softmax, Loss, DEFAULT_HUBER_DELTA, POISSON_LOG_OFFSET};
pub use model::{evaluate_logits, one_hot, Activation, Dataset, DenseLayer, Evaluation, Forward, MlpModel};
pub use optim::Optimizer;
pub use train::{train_base, train_base_observed, EpochLoss, TrainConfig};

pub(crate) use optim::GroupState;
