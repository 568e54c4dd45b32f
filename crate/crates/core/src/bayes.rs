//! Whitened formulation of a Gaussian inverse problem.
//!
//! With `S_pr S_prᵀ = Γ_pr` and `S_obs S_obsᵀ = Γ_obs` (lower Cholesky
//! factors), the change of variables `v = S_pr⁻¹ (u - u_pr)` turns the
//! posterior into `π(v) ∝ exp(-½ |H(v)|²)` with `H(v) = [v; f(v)]` and
//! `f(v) = S_obs⁻¹ (F(S_pr v + u_pr) - d)`. Samplers only ever see `f`
//! through [`MisfitMap`], so the true model and a surrogate are
//! interchangeable.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Unwhitened parameter-to-observation map `F`.
pub trait ForwardMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn eval_with_jacobian(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// Whitened misfit `f : Rⁿ → Rᵐ` and its Jacobian.
pub trait MisfitMap: Send + Sync {
    /// Parameter dimension `n`.
    fn dim(&self) -> usize;
    /// Observation dimension `m`.
    fn num_obs(&self) -> usize;
    fn misfit(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
    fn misfit_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

impl<T: MisfitMap + ?Sized> MisfitMap for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_obs(&self) -> usize {
        (**self).num_obs()
    }
    fn misfit(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).misfit(v)
    }
    fn misfit_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        (**self).misfit_and_jacobian(v)
    }
}

impl<T: MisfitMap + ?Sized> MisfitMap for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_obs(&self) -> usize {
        (**self).num_obs()
    }
    fn misfit(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).misfit(v)
    }
    fn misfit_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        (**self).misfit_and_jacobian(v)
    }
}

/// Linear forward map `F(u) = A u`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
}

impl ForwardMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }
    fn output_dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.a.ncols() {
            return Err(Error::dim("linear map input", self.a.ncols(), u.len()));
        }
        Ok(&self.a * u)
    }
    fn eval_with_jacobian(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.eval(u)?, self.a.clone()))
    }
}

/// Affine misfit `f(v) = A v - b`, already in whitened coordinates.
#[derive(Debug, Clone)]
pub struct AffineMisfit {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMisfit {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dim("affine misfit offset", a.nrows(), b.len()));
        }
        Ok(Self { a, b })
    }

    /// `f ≡ 0` with `m` outputs.
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            a: DMatrix::zeros(m, n),
            b: DVector::zeros(m),
        }
    }

    /// Exact posterior `N((AᵀA + I)⁻¹ Aᵀ b, (AᵀA + I)⁻¹)` in `v`.
    pub fn posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        gaussian_posterior(&self.a, &self.b)
    }
}

impl MisfitMap for AffineMisfit {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn num_obs(&self) -> usize {
        self.a.nrows()
    }
    fn misfit(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.a.ncols() {
            return Err(Error::dim("affine misfit input", self.a.ncols(), v.len()));
        }
        Ok(&self.a * v - &self.b)
    }
    fn misfit_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.misfit(v)?, self.a.clone()))
    }
}

/// Mean and covariance of the Gaussian `∝ exp(-½ (|v|² + |A v - b|²))`.
pub fn gaussian_posterior(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let precision = a.transpose() * a + DMatrix::identity(n, n);
    let chol = Cholesky::new(precision).expect("AᵀA + I is positive definite");
    let cov = chol.inverse();
    let mean = chol.solve(&(a.transpose() * b));
    (mean, cov)
}

fn lower_factor(cov: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !cov.is_square() {
        return Err(Error::InvalidInput(format!("{what} covariance is not square")));
    }
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-12 * cov.abs().max().max(1.0) {
        return Err(Error::InvalidInput(format!("{what} covariance is not symmetric")));
    }
    Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} covariance")))
}

/// Inverse problem in whitened coordinates, backed by the true forward map.
#[derive(Clone)]
pub struct WhitenedProblem {
    map: Arc<dyn ForwardMap>,
    prior_mean: DVector<f64>,
    s_pr: DMatrix<f64>,
    s_obs: DMatrix<f64>,
    data: DVector<f64>,
}

impl std::fmt::Debug for WhitenedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WhitenedProblem")
            .field("n", &self.prior_mean.len())
            .field("m", &self.data.len())
            .finish()
    }
}

impl WhitenedProblem {
    pub fn new(
        map: Arc<dyn ForwardMap>,
        prior_mean: DVector<f64>,
        prior_cov: &DMatrix<f64>,
        data: DVector<f64>,
        noise_cov: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = map.input_dim();
        let m = map.output_dim();
        if prior_mean.len() != n {
            return Err(Error::dim("prior mean", n, prior_mean.len()));
        }
        if prior_cov.nrows() != n {
            return Err(Error::dim("prior covariance", n, prior_cov.nrows()));
        }
        if data.len() != m {
            return Err(Error::dim("data", m, data.len()));
        }
        if noise_cov.nrows() != m {
            return Err(Error::dim("noise covariance", m, noise_cov.nrows()));
        }
        let s_pr = lower_factor(prior_cov, "prior")?.l();
        let s_obs = lower_factor(noise_cov, "noise")?.l();
        Ok(Self {
            map,
            prior_mean,
            s_pr,
            s_obs,
            data,
        })
    }

    pub fn forward_map(&self) -> &Arc<dyn ForwardMap> {
        &self.map
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn prior_factor(&self) -> &DMatrix<f64> {
        &self.s_pr
    }

    pub fn noise_factor(&self) -> &DMatrix<f64> {
        &self.s_obs
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    /// `v = S_pr⁻¹ (u - u_pr)`.
    pub fn whiten(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.prior_mean.len() {
            return Err(Error::dim("parameter vector", self.prior_mean.len(), u.len()));
        }
        self.s_pr
            .solve_lower_triangular(&(u - &self.prior_mean))
            .ok_or_else(|| Error::NotPositiveDefinite("prior factor".into()))
    }

    /// `u = S_pr v + u_pr`.
    pub fn unwhiten(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.prior_mean.len() {
            return Err(Error::dim("whitened vector", self.prior_mean.len(), v.len()));
        }
        Ok(&self.s_pr * v + &self.prior_mean)
    }

    fn standardize(&self, residual: DVector<f64>) -> Result<DVector<f64>> {
        self.s_obs
            .solve_lower_triangular(&residual)
            .ok_or_else(|| Error::NotPositiveDefinite("noise factor".into()))
    }
}

impl MisfitMap for WhitenedProblem {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn num_obs(&self) -> usize {
        self.data.len()
    }

    fn misfit(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.unwhiten(v)?;
        let f = self.map.eval(&u)?;
        self.standardize(f - &self.data)
    }

    fn misfit_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let u = self.unwhiten(v)?;
        let (f, jf) = self.map.eval_with_jacobian(&u)?;
        let misfit = self.standardize(f - &self.data)?;
        let jac = self
            .s_obs
            .solve_lower_triangular(&(jf * &self.s_pr))
            .ok_or_else(|| Error::NotPositiveDefinite("noise factor".into()))?;
        Ok((misfit, jac))
    }
}

/// `H(v) = [v; f(v)]` and `∇H(v) = [I; ∇f(v)]`.
pub struct StackedMap<'a, M: MisfitMap + ?Sized> {
    misfit: &'a M,
}

impl<'a, M: MisfitMap + ?Sized> StackedMap<'a, M> {
    pub fn new(misfit: &'a M) -> Self {
        Self { misfit }
    }

    pub fn output_dim(&self) -> usize {
        self.misfit.dim() + self.misfit.num_obs()
    }

    pub fn eval(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.misfit.misfit(v)?;
        Ok(stack(v, &f))
    }

    pub fn eval_with_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (f, jf) = self.misfit.misfit_and_jacobian(v)?;
        Ok((stack(v, &f), stack_jacobian(&jf)))
    }
}

pub(crate) fn stack(v: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut h = DVector::zeros(n + f.len());
    h.rows_mut(0, n).copy_from(v);
    h.rows_mut(n, f.len()).copy_from(f);
    h
}

pub(crate) fn stack_jacobian(jf: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = jf.shape();
    let mut j = DMatrix::zeros(n + m, n);
    j.view_mut((0, 0), (n, n)).fill_with_identity();
    j.view_mut((n, 0), (m, n)).copy_from(jf);
    j
}

/// Unnormalised `log π_tar(v) = -½ (|v|² + |f(v)|²)`.
pub fn log_target<M: MisfitMap + ?Sized>(misfit: &M, v: &DVector<f64>) -> Result<f64> {
    let f = misfit.misfit(v)?;
    Ok(-0.5 * (v.norm_squared() + f.norm_squared()))
}
