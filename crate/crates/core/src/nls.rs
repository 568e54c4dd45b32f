//! Levenberg–Marquardt for unconstrained nonlinear least squares,
//! `min ½ |r(z)|²`.
//!
//! Damping is multiplicative: ×10 after a rejected trial, ÷10 after an
//! accepted one, and always kept in `[1e-12, 1e12]`. Reaching the upper
//! bound ends the solve with [`Termination::MaxIterations`].

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{Error, Result};

const MIN_DAMPING: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e12;

/// Residual and Jacobian of a least-squares problem.
pub trait LeastSquaresProblem {
    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>>;
    fn residual_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// Adapts a pair of closures to [`LeastSquaresProblem`].
pub struct FnProblem<R, J> {
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> LeastSquaresProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.residual)(z))
    }
    fn residual_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok(((self.residual)(z), (self.jacobian)(z)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NlsOptions {
    /// Stop when `|Jᵀ r|_∞` falls to this value.
    pub gradient_tol: f64,
    /// Stop when the step satisfies `|δ| <= step_tol (|z| + step_tol)`.
    pub step_tol: f64,
    /// Budget of trial steps, accepted or not.
    pub max_iterations: usize,
}

impl Default for NlsOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-8,
            step_tol: 1e-10,
            max_iterations: 500,
        }
    }
}

impl NlsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::InvalidInput("NLS tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct NlsResult {
    pub minimizer: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    /// `|Jᵀ r|_∞` at the minimiser.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl NlsResult {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Minimises `½ |r(z)|²` from `start`.
///
/// A non-finite residual at the start is an error. Trial points whose
/// residual is non-finite, or whose evaluation fails, count as rejected
/// steps.
pub fn solve_nls<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    start: DVector<f64>,
    options: &NlsOptions,
) -> Result<NlsResult> {
    options.validate()?;
    let mut z = start;
    let (mut r, mut jac) = problem.residual_and_jacobian(&z)?;
    if !all_finite(&r) || jac.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("residual at the initial iterate".into()));
    }
    if jac.ncols() != z.len() || jac.nrows() != r.len() {
        return Err(Error::dim("least-squares Jacobian columns", z.len(), jac.ncols()));
    }
    let mut cost = r.norm_squared();
    let k = z.len();
    let mut jtj = jac.tr_mul(&jac);
    let max_diag = jtj.diagonal().max();
    let mut damping = (1e-6 * max_diag).clamp(MIN_DAMPING, MAX_DAMPING);
    let mut trials = 0usize;

    let finish = |z: DVector<f64>, r: DVector<f64>, g: f64, it: usize, t: Termination| NlsResult {
        residual_norm: r.norm(),
        minimizer: z,
        residual: r,
        gradient_norm: g,
        iterations: it,
        termination: t,
    };

    loop {
        let grad = jac.tr_mul(&r);
        let gnorm = grad.amax();
        if gnorm <= options.gradient_tol {
            return Ok(finish(z, r, gnorm, trials, Termination::Gradient));
        }
        loop {
            if trials >= options.max_iterations {
                return Ok(finish(z, r, gnorm, trials, Termination::MaxIterations));
            }
            trials += 1;
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += damping;
            }
            let Some(chol) = Cholesky::new(a) else {
                damping *= 10.0;
                if damping > MAX_DAMPING {
                    return Ok(finish(z, r, gnorm, trials, Termination::MaxIterations));
                }
                continue;
            };
            let step = -chol.solve(&grad);
            if step.norm() <= options.step_tol * (z.norm() + options.step_tol) {
                return Ok(finish(z, r, gnorm, trials, Termination::Step));
            }
            let trial = &z + &step;
            let accepted = match problem.residual(&trial) {
                Ok(rt) if all_finite(&rt) && rt.norm_squared() < cost => Some(trial),
                _ => None,
            };
            match accepted {
                Some(next) => {
                    let (rn, jn) = match problem.residual_and_jacobian(&next) {
                        Ok(x) if all_finite(&x.0) && x.1.iter().all(|v| v.is_finite()) => x,
                        _ => {
                            damping *= 10.0;
                            if damping > MAX_DAMPING {
                                return Ok(finish(z, r, gnorm, trials, Termination::MaxIterations));
                            }
                            continue;
                        }
                    };
                    z = next;
                    r = rn;
                    jac = jn;
                    jtj = jac.tr_mul(&jac);
                    cost = r.norm_squared();
                    damping = (damping / 10.0).max(MIN_DAMPING);
                    break;
                }
                None => {
                    damping *= 10.0;
                    if damping > MAX_DAMPING {
                        return Ok(finish(z, r, gnorm, trials, Termination::MaxIterations));
                    }
                }
            }
        }
    }
}
