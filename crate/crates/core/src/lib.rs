//! Unrolled ADMM smoothness cost for training predictors under a TV prior,
//! together with TV, Huber and Charbonnier baselines, reference solvers and
//! a piecewise-constant signal prediction harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod field;
pub mod mlp;
pub mod oracles;
pub mod regularizers;

pub use error::{Error, Result};
pub use field::{edge_mask, gradient_adjoint, mask_gradients, spatial_gradient, Field, GradField, ImportanceMask, Shape};
pub use regularizers::{
    charbonnier_smoothness, huber_smoothness, soft_threshold, tv_smoothness, unroll_updates, unrolled_smoothness,
    RegularizerConfig, RegularizerKind, Smoothness, SmoothnessResult, UnrollGradient, UnrollState,
};
