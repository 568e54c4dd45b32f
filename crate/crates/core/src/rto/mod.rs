//! Randomize-then-optimize proposals and the independence
//! Metropolis–Hastings correction.
//!
//! Everything here is generic over [`MisfitMap`], so the same code drives
//! the finite-element model and a trained surrogate.

mod fullspace;
mod mh;
mod subspace;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use fullspace::{propose_fullspace, FullSpaceRto};
pub use mh::{mh_correct, ChainResult};
pub use subspace::{build_subspace, propose, weight_log, RtoSubspace};

use crate::bayes::MisfitMap;
use crate::nls::{solve_nls, LeastSquaresProblem, NlsOptions};
use crate::rng;
use crate::{Error, Result};

/// Largest reduced residual norm at which a proposal counts as solved.
pub const DEFAULT_ROOT_TOL: f64 = 1e-6;

/// One proposal: driving noise, mapped point and its log-weight.
#[derive(Debug, Clone)]
pub struct ProposalRecord {
    pub xi: DVector<f64>,
    pub v_prop: DVector<f64>,
    /// `log w(v_prop)`; `-∞` when the proposal is unusable.
    pub log_weight: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ProposalRecord {
    fn failed(xi: DVector<f64>) -> Self {
        Self {
            v_prop: xi.clone(),
            xi,
            log_weight: f64::NEG_INFINITY,
            converged: false,
            iterations: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RtoOptions {
    pub nls: NlsOptions,
    /// Relative singular-value cut-off for the subspace.
    pub rank_threshold: f64,
    pub root_tol: f64,
}

impl Default for RtoOptions {
    fn default() -> Self {
        Self {
            nls: NlsOptions::default(),
            rank_threshold: 1e-10,
            root_tol: DEFAULT_ROOT_TOL,
        }
    }
}

struct StackedResidual<'a, M: MisfitMap + ?Sized>(&'a M);

impl<M: MisfitMap + ?Sized> LeastSquaresProblem for StackedResidual<'_, M> {
    fn residual(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        crate::bayes::StackedMap::new(self.0).eval(v)
    }
    fn residual_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        crate::bayes::StackedMap::new(self.0).eval_with_jacobian(v)
    }
}

/// MAP point `argmin ½ |H(v)|²`.
pub fn find_reference<M: MisfitMap + ?Sized>(
    misfit: &M,
    start: DVector<f64>,
    nls: &NlsOptions,
) -> Result<DVector<f64>> {
    if start.len() != misfit.dim() {
        return Err(Error::dim("MAP start", misfit.dim(), start.len()));
    }
    let sol = solve_nls(&StackedResidual(misfit), start, nls)?;
    if !sol.converged() {
        return Err(Error::NoConvergence(format!(
            "MAP search stopped after {} iterations with |∇| = {:e}",
            sol.iterations, sol.gradient_norm
        )));
    }
    Ok(sol.minimizer)
}

/// Standard-normal driving noise for proposal `index`.
pub fn proposal_noise(seed: u64, index: usize, dim: usize) -> DVector<f64> {
    let mut r = rng::stream(seed, rng::PROPOSALS, index as u64);
    DVector::from_vec(rng::standard_normal_vec(&mut r, dim))
}

/// Generates `count` subspace proposals in parallel. Proposal `i` uses
/// stream `i`, so results do not depend on the thread count.
pub fn generate_proposals<M: MisfitMap + ?Sized>(
    subspace: &RtoSubspace,
    misfit: &M,
    count: usize,
    seed: u64,
    options: &RtoOptions,
) -> Vec<ProposalRecord> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let xi = proposal_noise(seed, i, subspace.dim());
            propose(subspace, misfit, xi.clone(), &options.nls, options.root_tol).unwrap_or_else(|e| {
                log::debug!("proposal {i} failed: {e}");
                ProposalRecord::failed(xi)
            })
        })
        .collect()
}

/// Proposal generation and MH correction for a fixed subspace; this is the
/// online sampling loop shared by direct and surrogate-driven runs.
pub fn sample_chain<M: MisfitMap + ?Sized>(
    subspace: &RtoSubspace,
    misfit: &M,
    n_samps: usize,
    seed: u64,
    options: &RtoOptions,
) -> Result<ChainResult> {
    let t0 = Instant::now();
    let proposals = generate_proposals(subspace, misfit, n_samps, seed, options);
    let proposal_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let start_weight = weight_log(subspace, misfit, &subspace.v_ref)?;
    let mut uniforms = rng::stream(seed, rng::MH_UNIFORMS, 0);
    let mut chain = mh_correct(&proposals, &subspace.v_ref, start_weight, &mut uniforms)?;
    chain.proposal_seconds = proposal_seconds;
    chain.mh_seconds = t1.elapsed().as_secs_f64();
    Ok(chain)
}

/// Complete scalable RTO-MH: MAP, subspace, proposals, correction.
pub fn run_rto<M: MisfitMap + ?Sized>(
    misfit: &M,
    n_samps: usize,
    seed: u64,
    options: &RtoOptions,
) -> Result<(RtoSubspace, ChainResult)> {
    let t0 = Instant::now();
    let v_ref = find_reference(misfit, DVector::zeros(misfit.dim()), &options.nls)?;
    let subspace = build_subspace(misfit, &v_ref, options.rank_threshold)?;
    let setup = t0.elapsed().as_secs_f64();
    let mut chain = sample_chain(&subspace, misfit, n_samps, seed, options)?;
    chain.setup_seconds = setup;
    Ok((subspace, chain))
}
