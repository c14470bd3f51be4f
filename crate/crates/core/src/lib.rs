//! Gradient-based bilevel optimization with nonsmooth lower-level problems.
//!
//! The lower level is solved by Bregman forward-backward splitting or a Bregman
//! primal-dual method whose updates are smooth, so the unrolled iterations can be
//! differentiated exactly. The crate provides the proximal maps, the solvers,
//! reverse/forward/fixed-point hypergradient estimators, outer optimizers, a 1D
//! nonnegative least-squares test problem with analytic gradients and a multi-label
//! TV segmentation model.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

pub mod bregman;
pub mod error;
pub mod hypergrad;
pub mod lower;
pub mod scalar;
pub mod segmentation;
pub mod smoothed;
pub mod toy;
pub mod upper;

pub use error::{Error, Result};
pub use scalar::{vecops, Scalar};

pub type ProxResult64 = bregman::ProxResult<f64>;
pub type SimpleFunction64 = bregman::SimpleFunction<f64>;
pub type IterateTrace64 = lower::IterateTrace<f64>;
pub type GradientReport64 = hypergrad::GradientReport<f64>;
pub type LossGrads64 = hypergrad::LossGrads<f64>;
pub type ToyConfig64 = toy::ToyConfig<f64>;
pub type ToyOutcome64 = toy::ToyOutcome<f64>;
pub type UpperState64 = upper::UpperState<f64>;
pub type CostTensor64 = segmentation::CostTensor<f64>;
pub type Sample64 = segmentation::Sample<f64>;
