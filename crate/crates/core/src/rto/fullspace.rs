//! Full-space RTO with the thin QR factor of `∇H(v_ref)`.

use nalgebra::{DMatrix, DVector};

use super::subspace::log_abs_det;
use super::ProposalRecord;
use crate::bayes::{stack, stack_jacobian, MisfitMap};
use crate::nls::{solve_nls, LeastSquaresProblem, NlsOptions};
use crate::{Error, Result};

/// `v_ref` and the `(n+m) × n` orthonormal factor `Q` of `[I; ∇f(v_ref)]`.
#[derive(Debug, Clone)]
pub struct FullSpaceRto {
    pub v_ref: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl FullSpaceRto {
    pub fn new<M: MisfitMap + ?Sized>(misfit: &M, v_ref: DVector<f64>) -> Result<Self> {
        let (_, jf) = misfit.misfit_and_jacobian(&v_ref)?;
        let q = stack_jacobian(&jf).qr().q();
        Ok(Self { v_ref, q })
    }

    /// `log w(v) = -log|det(Qᵀ∇H)| - ½|H|² + ½|QᵀH|²`.
    pub fn weight_log<M: MisfitMap + ?Sized>(&self, misfit: &M, v: &DVector<f64>) -> Result<f64> {
        let (f, jf) = misfit.misfit_and_jacobian(v)?;
        let h = stack(v, &f);
        let qh = self.q.tr_mul(&h);
        let det = log_abs_det(self.q.tr_mul(&stack_jacobian(&jf)));
        if det == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(-det - 0.5 * h.norm_squared() + 0.5 * qh.norm_squared())
    }

    /// Solves `min ½ |Qᵀ H(v) - ξ|²` from `v_ref`.
    pub fn propose<M: MisfitMap + ?Sized>(
        &self,
        misfit: &M,
        xi: DVector<f64>,
        nls: &NlsOptions,
        root_tol: f64,
    ) -> Result<ProposalRecord> {
        if xi.len() != self.v_ref.len() {
            return Err(Error::dim("proposal noise", self.v_ref.len(), xi.len()));
        }
        let problem = Projected {
            q: &self.q,
            misfit,
            xi: &xi,
        };
        let sol = solve_nls(&problem, self.v_ref.clone(), nls)?;
        let converged = sol.converged() && sol.residual_norm <= root_tol;
        let log_weight = if converged {
            self.weight_log(misfit, &sol.minimizer)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(ProposalRecord {
            xi,
            v_prop: sol.minimizer,
            log_weight,
            converged,
            iterations: sol.iterations,
        })
    }
}

struct Projected<'a, M: MisfitMap + ?Sized> {
    q: &'a DMatrix<f64>,
    misfit: &'a M,
    xi: &'a DVector<f64>,
}

impl<M: MisfitMap + ?Sized> LeastSquaresProblem for Projected<'_, M> {
    fn residual(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.misfit.misfit(v)?;
        Ok(self.q.tr_mul(&stack(v, &f)) - self.xi)
    }

    fn residual_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (f, jf) = self.misfit.misfit_and_jacobian(v)?;
        let r = self.q.tr_mul(&stack(v, &f)) - self.xi;
        Ok((r, self.q.tr_mul(&stack_jacobian(&jf))))
    }
}

/// Convenience wrapper around [`FullSpaceRto::propose`].
pub fn propose_fullspace<M: MisfitMap + ?Sized>(
    misfit: &M,
    v_ref: &DVector<f64>,
    xi: DVector<f64>,
    nls: &NlsOptions,
) -> Result<ProposalRecord> {
    FullSpaceRto::new(misfit, v_ref.clone())?.propose(misfit, xi, nls, super::DEFAULT_ROOT_TOL)
}
