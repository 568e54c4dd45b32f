//! Subspace RTO: reduced SVD of `∇f(v_ref)`, the r-dimensional proposal
//! optimisation and the simplified weight.

use nalgebra::{DMatrix, DVector, SVD};

use super::ProposalRecord;
use crate::bayes::MisfitMap;
use crate::nls::{solve_nls, LeastSquaresProblem, NlsOptions};
use crate::{Error, Result};

/// Linearisation point plus `∇f(v_ref) ≈ Ψ Λ Φᵀ` truncated to rank `r`.
#[derive(Debug, Clone)]
pub struct RtoSubspace {
    pub v_ref: DVector<f64>,
    /// `m × r`, orthonormal columns.
    pub psi: DMatrix<f64>,
    /// Non-increasing singular values.
    pub lambda: DVector<f64>,
    /// `n × r`, orthonormal columns.
    pub phi: DMatrix<f64>,
}

impl RtoSubspace {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    /// Builds the subspace from an explicit Jacobian. Singular values below
    /// `rank_threshold × σ_max`, and exact zeros, are discarded.
    pub fn from_jacobian(v_ref: DVector<f64>, jac: DMatrix<f64>, rank_threshold: f64) -> Result<Self> {
        let (m, n) = jac.shape();
        if v_ref.len() != n {
            return Err(Error::dim("linearisation point", n, v_ref.len()));
        }
        if !(rank_threshold >= 0.0) {
            return Err(Error::InvalidInput("rank threshold must be non-negative".into()));
        }
        if jac.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Jacobian at the linearisation point".into()));
        }
        let svd = SVD::new(jac, true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let smax = order.first().map(|&k| s[k]).unwrap_or(0.0);
        let keep: Vec<usize> = order
            .into_iter()
            .filter(|&k| s[k] > 0.0 && s[k] >= rank_threshold * smax)
            .collect();
        let r = keep.len();
        let mut psi = DMatrix::zeros(m, r);
        let mut phi = DMatrix::zeros(n, r);
        let mut lambda = DVector::zeros(r);
        for (col, &k) in keep.iter().enumerate() {
            psi.set_column(col, &u.column(k));
            phi.set_column(col, &vt.row(k).transpose());
            lambda[col] = s[k];
        }
        Ok(Self {
            v_ref,
            psi,
            lambda,
            phi,
        })
    }

    /// `(Λ² + I)^{-1/2}` as a vector.
    pub fn scaling(&self) -> DVector<f64> {
        self.lambda.map(|l| 1.0 / (1.0 + l * l).sqrt())
    }

    /// `log |det(Q̃ᵀ ∇H(v))| = log|det (Λ²+I)^{-1/2}| + log|det(I + ΛΨᵀ J Φ)|`
    /// for the misfit Jacobian `jac` at `v`. Returns `-∞` when singular.
    pub fn log_abs_det(&self, jac: &DMatrix<f64>) -> f64 {
        let r = self.rank();
        if r == 0 {
            return 0.0;
        }
        let scale_term: f64 = -0.5 * self.lambda.iter().map(|l| (1.0 + l * l).ln()).sum::<f64>();
        let mut core = DMatrix::from_diagonal(&self.lambda) * self.psi.tr_mul(jac) * &self.phi;
        for i in 0..r {
            core[(i, i)] += 1.0;
        }
        scale_term + log_abs_det(core)
    }
}

/// `log |det A|` through LU; `-∞` for singular or non-finite matrices.
pub(crate) fn log_abs_det(a: DMatrix<f64>) -> f64 {
    if a.iter().any(|x| !x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let lu = a.lu();
    let u = lu.u();
    let mut acc = 0.0;
    for d in u.diagonal().iter() {
        if *d == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += d.abs().ln();
    }
    acc
}

/// Reduced SVD of `∇f(v_ref)`.
pub fn build_subspace<M: MisfitMap + ?Sized>(
    misfit: &M,
    v_ref: &DVector<f64>,
    rank_threshold: f64,
) -> Result<RtoSubspace> {
    let (_, jac) = misfit.misfit_and_jacobian(v_ref)?;
    RtoSubspace::from_jacobian(v_ref.clone(), jac, rank_threshold)
}

/// `log w(v)` of the subspace formulation:
///
/// `-log|det (Λ²+I)^{-1/2}| - log|det(I + ΛΨᵀ∇f(v)Φ)|
///  - ½ (|f|² + |Φᵀv|² - |(Λ²+I)^{-1/2}(Φᵀv + ΛΨᵀf)|²)`.
pub fn weight_log<M: MisfitMap + ?Sized>(
    subspace: &RtoSubspace,
    misfit: &M,
    v: &DVector<f64>,
) -> Result<f64> {
    let (f, jac) = misfit.misfit_and_jacobian(v)?;
    Ok(weight_log_from(subspace, v, &f, &jac))
}

pub(crate) fn weight_log_from(
    subspace: &RtoSubspace,
    v: &DVector<f64>,
    f: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> f64 {
    let fsq = f.norm_squared();
    if subspace.rank() == 0 {
        return -0.5 * fsq;
    }
    let log_det = subspace.log_abs_det(jac);
    if log_det == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let proj = subspace.phi.tr_mul(v);
    let mixed = &proj + subspace.lambda.component_mul(&subspace.psi.tr_mul(f));
    let scaled = mixed.component_mul(&subspace.scaling());
    let w = -log_det - 0.5 * (fsq + proj.norm_squared() - scaled.norm_squared());
    if w.is_nan() {
        f64::NEG_INFINITY
    } else {
        w
    }
}

/// Residual `(Λ²+I)^{-1/2} (z + ΛΨᵀ f(v_⊥ + Φ z)) - Φᵀ ξ` in `z`, i.e. the
/// reduced form of `Q̃ᵀ H(v) = Φᵀ ξ`.
struct ReducedProblem<'a, M: MisfitMap + ?Sized> {
    subspace: &'a RtoSubspace,
    misfit: &'a M,
    v_perp: &'a DVector<f64>,
    target: DVector<f64>,
    scaling: DVector<f64>,
}

impl<M: MisfitMap + ?Sized> ReducedProblem<'_, M> {
    fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        self.v_perp + &self.subspace.phi * z
    }

    fn reduced(&self, z: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        let s = self.subspace;
        (z + s.lambda.component_mul(&s.psi.tr_mul(f))).component_mul(&self.scaling) - &self.target
    }
}

impl<M: MisfitMap + ?Sized> LeastSquaresProblem for ReducedProblem<'_, M> {
    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.misfit.misfit(&self.point(z))?;
        Ok(self.reduced(z, &f))
    }

    fn residual_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = self.subspace;
        let (f, jf) = self.misfit.misfit_and_jacobian(&self.point(z))?;
        let r = self.reduced(z, &f);
        let mut j = DMatrix::from_diagonal(&s.lambda) * s.psi.tr_mul(&jf) * &s.phi;
        for i in 0..s.rank() {
            j[(i, i)] += 1.0;
        }
        for (i, mut row) in j.row_iter_mut().enumerate() {
            row *= self.scaling[i];
        }
        Ok((r, j))
    }
}

/// Maps one standard-normal draw `ξ` to a subspace RTO proposal and its
/// log-weight. Proposals whose reduced equation is not solved to
/// `root_tol` are returned with `converged = false`.
pub fn propose<M: MisfitMap + ?Sized>(
    subspace: &RtoSubspace,
    misfit: &M,
    xi: DVector<f64>,
    nls: &NlsOptions,
    root_tol: f64,
) -> Result<ProposalRecord> {
    let n = subspace.dim();
    if xi.len() != n {
        return Err(Error::dim("proposal noise", n, xi.len()));
    }
    let target = subspace.phi.tr_mul(&xi);
    let v_perp = &xi - &subspace.phi * &target;
    let (v_prop, converged, iterations) = if subspace.rank() == 0 {
        (v_perp, true, 0)
    } else {
        let problem = ReducedProblem {
            subspace,
            misfit,
            v_perp: &v_perp,
            target,
            scaling: subspace.scaling(),
        };
        let z0 = subspace.phi.tr_mul(&subspace.v_ref);
        let sol = solve_nls(&problem, z0, nls)?;
        let ok = sol.converged() && sol.residual_norm <= root_tol;
        (problem.point(&sol.minimizer), ok, sol.iterations)
    };
    let log_weight = if converged {
        weight_log(subspace, misfit, &v_prop)?
    } else {
        f64::NEG_INFINITY
    };
    Ok(ProposalRecord {
        xi,
        v_prop,
        log_weight,
        converged,
        iterations,
    })
}
