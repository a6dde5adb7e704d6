//! droaug-core: training small image classifiers with data augmentation plus
//! a gradient-norm variation penalty that approximates L∞-Wasserstein
//! distributionally robust optimization, together with the adversarial (PGD)
//! and corruption-severity evaluation harnesses needed to verify it.

pub mod adversary;
pub mod augment;
pub mod autodiff;
pub mod corruptions;
pub mod crc;
pub mod data;
pub mod error;
pub mod imgops;
pub mod models;
pub mod report;
pub mod rng;
pub mod robust;
pub mod scalar;
pub mod train;

pub use autodiff::{ActivationKind, ExprGraph, NodeId, Tensor};
pub use data::{Batch, Dataset};
pub use error::{Error, ErrorClass, Result};
pub use models::{build_model, Model};
pub use scalar::{Dtype, Scalar};
