//! ReDense: improve a trained feedforward network by replacing its output
//! layer with a fixed random ReLU lifting and a norm-constrained linear head.
//!
//! The head starts at a weight that reproduces the original network's
//! logits exactly, and projected training inside the resulting Frobenius
//! ball never returns a weight with a higher training loss.
//!
//! # Modules
//!
//! - [`linalg`]: dense matrices, SVD pseudo-inverse, seeded Gaussian sampling.
//! - [`nn`]: MLP engine with four classification losses and Adam/SGD.
//! - [`redense`]: lifting, initialization, projected training, guarantee report.
//! - [`data`]: IDX/CSV loaders, feature bundles, synthetic data, splits.
//! - [`persist`]: model files and learning-curve CSVs.
//!
//! # Example
//!
//! ```
//! use redense::data::{gen_synthetic, SyntheticKind};
//! use redense::linalg::RngSeed;
//! use redense::nn::{train_base, Activation, Loss, MlpModel, TrainConfig};
//! use redense::redense::{default_config, train, RedenseLayer};
//!
//! # fn main() -> redense::Result<()> {
//! let data = gen_synthetic(SyntheticKind::Moons, 200, 2, 0.2, RngSeed(1))?;
//! let model = MlpModel::init(2, &[8], Activation::Relu, 2, RngSeed(2))?;
//! let cfg = TrainConfig { epochs: 5, batch_size: 32, ..TrainConfig::default() };
//! let (model, _) = train_base(&model, &data, Loss::SoftmaxCrossEntropy, &cfg)?;
//!
//! // Fold the output bias into the features so the head sees all of it.
//! let features = model.folded_features(&data.inputs)?;
//! let weight = model.folded_output_weight();
//!
//! let head = RedenseLayer::build(&weight, features.cols(), features.cols(), RngSeed(3))?;
//! let fit = train(&head, &features, &data.targets, &default_config(data.len(), RngSeed(4)))?;
//! assert!(fit.report.final_loss <= fit.report.old_loss);
//! # Ok(())
//! # }
//! ```

mod binio;
mod error;

pub mod data;
pub mod linalg;
pub mod nn;
pub mod persist;
pub mod redense;

pub use error::{Error, Result};
