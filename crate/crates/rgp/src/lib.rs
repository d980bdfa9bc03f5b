//! Reparametrized gradient perturbation for small dense networks.
//!
//! Each layer's gradient is carried on a pair of orthonormal low-rank factors
//! taken from the recent weight history. Per-sample carrier gradients are
//! clipped jointly, summed, noised and mapped back to a weight update.

pub mod carriers;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod privatize;
pub mod train;

pub use carriers::{decompose_carriers, decompose_carriers_with, CarrierPair};
pub use data::{synthetic_clusters, Dataset};
pub use error::{Result, RgpError};
pub use linalg::{gram_schmidt, Orthonormal};
pub use model::{Head, ToyModel};
pub use privatize::{
    carrier_gradient, clip_and_noise, per_sample_carrier_gradients, reconstruct_weight_grad, CarrierGradient,
    LayerCarrierGrad, NoisyAggregate,
};
pub use train::{planned_budget, train_nonprivate, train_private, PrivateModel, StepRecord, TrainRunConfig};
