//! Elliptic pressure equation, permeability parameterisations and the
//! parameter-to-observation map with its sensitivities.

mod banded;
mod fem;
mod field;
mod mesh;
mod observation;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

pub use banded::{BandCholesky, SymBand};
pub use fem::{
    assemble_and_solve, assemble_free_dense, solve_system, Affine, BoundaryConditions,
    FaceCondition, FemSolution,
};
pub use field::{
    kl_decompose, squared_exponential, weighted_kernel_matrix, KlParameterization,
    Parameterization, PermeabilityField, RbfParameterization,
};
pub use mesh::Mesh;
pub use observation::{benchmark_sensors, grid_sensors, ObservationOperator};

use crate::bayes::ForwardMap;
use crate::{Error, Result};

/// `100 sin(π x1) sin(π x2)` at the nodes.
pub fn benchmark_source(mesh: &Mesh) -> Vec<f64> {
    mesh.interpolate(|x, y| 100.0 * (PI * x).sin() * (PI * y).sin())
}

/// Parameter-to-observation map `u ↦ observe(solve(κ(u)))`, together with
/// the Gaussian prior and noise descriptors of the inverse problem.
#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub mesh: Mesh,
    pub parameterization: Parameterization,
    pub source: Vec<f64>,
    pub bc: BoundaryConditions,
    pub observation: ObservationOperator,
    pub noise_cov: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl ForwardProblem {
    pub fn num_params(&self) -> usize {
        self.parameterization.dim()
    }

    pub fn num_obs(&self) -> usize {
        self.observation.len()
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_params() {
            return Err(Error::dim("parameter vector", self.num_params(), u.len()));
        }
        Ok(())
    }

    /// Nodal pressure for parameters `u`.
    pub fn pressure(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        let field = self.parameterization.field(u, &self.mesh)?;
        assemble_and_solve(&self.mesh, &field, &self.source, &self.bc)
    }

    /// Noiseless observations `F(u)`.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.observation.observe(&self.pressure(u)?)
    }

    /// `F(u)` and `∂F/∂u` by direct sensitivities: one extra solve with
    /// right-hand side `-(∂K/∂u_i) p` per parameter, reusing the factor.
    pub fn forward_and_jacobian(&self, u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check(u)?;
        let (field, dkappa) = self
            .parameterization
            .field_with_derivatives(u, &self.mesh)?;
        let sol = solve_system(&self.mesh, &field, &self.source, &self.bc)?;
        let obs = self.observation.observe(sol.pressure())?;
        let mut jac = DMatrix::zeros(self.num_obs(), self.num_params());
        for (i, dk) in dkappa.iter().enumerate() {
            let dp = sol.sensitivity(dk);
            let col = self.observation.observe(&dp)?;
            jac.set_column(i, &DVector::from_vec(col));
        }
        Ok((obs, jac))
    }

    pub fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.forward_and_jacobian(u).map(|(_, j)| j)
    }
}

impl ForwardMap for ForwardProblem {
    fn input_dim(&self) -> usize {
        self.num_params()
    }

    fn output_dim(&self) -> usize {
        self.num_obs()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.forward(u.as_slice())?))
    }

    fn eval_with_jacobian(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (f, j) = self.forward_and_jacobian(u.as_slice())?;
        Ok((DVector::from_vec(f), j))
    }
}
