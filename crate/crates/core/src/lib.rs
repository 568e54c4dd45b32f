//! Randomize-then-optimize (RTO) Metropolis–Hastings sampling for
//! PDE-constrained Bayesian inverse problems, with an optional
//! feedforward-network surrogate of the whitened data misfit.
//!
//! The crate is organised bottom-up:
//!
//! - [`forward_model`]: bilinear finite elements for the elliptic pressure
//!   equation, RBF and Karhunen–Loève permeability parameterisations,
//!   sensor interpolation and parameter sensitivities.
//! - [`bayes`]: whitening of a Gaussian inverse problem and the misfit map
//!   `f(v)` that every sampler consumes through [`bayes::MisfitMap`].
//! - [`nls`]: Levenberg–Marquardt for the least-squares subproblems.
//! - [`rto`]: subspace and full-space RTO proposals plus the independence
//!   Metropolis–Hastings correction.
//! - [`surrogate`]: Swish MLP, Adam training and input Jacobians.
//! - [`design`]: local Gaussian approximation and training-point design.
//! - [`diagnostics`]: ESS, REM/REC and posterior field summaries.
//! - [`cli`]: configuration, experiment driver and file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod cli;
pub mod design;
pub mod diagnostics;
mod error;
pub mod forward_model;
pub mod nls;
pub mod problems;
pub mod rng;
pub mod rto;
pub mod surrogate;

pub use error::{Error, Result};
