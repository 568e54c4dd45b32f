//! Permeability fields and their parameterisations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::mesh::Mesh;
use crate::{Error, Result};

/// Per-cell permeability values (one per mesh cell, at the midpoint).
#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    values: Vec<f64>,
}

impl PermeabilityField {
    /// Rejects non-positive or non-finite values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|k| !(**k > 0.0) || !k.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "permeability must be positive and finite, found {bad}"
            )));
        }
        Ok(Self { values })
    }

    /// Skips validation; the solver still rejects non-positive entries.
    pub fn from_values_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sum of isotropic Gaussian bumps, `κ(x) = Σ κ_i exp(-|x - c_i|² / (2 w²))`,
/// with log-weights `v_i = log κ_i` as the parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RbfParameterization {
    centers: Vec<[f64; 2]>,
    width: f64,
}

impl Default for RbfParameterization {
    /// Nine centres on the `{0.25, 0.5, 0.75}²` grid, width 0.1.
    fn default() -> Self {
        let ticks = [0.25, 0.5, 0.75];
        let centers = ticks
            .iter()
            .flat_map(|&y| ticks.iter().map(move |&x| [x, y]))
            .collect();
        Self {
            centers,
            width: 0.1,
        }
    }
}

impl RbfParameterization {
    pub fn new(centers: Vec<[f64; 2]>, width: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("RBF needs at least one centre".into()));
        }
        if !(width > 0.0) {
            return Err(Error::InvalidInput(format!("RBF width must be positive, got {width}")));
        }
        Ok(Self { centers, width })
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    /// Basis values `exp(-|x - c_i|² / (2 w²))` at `x`.
    pub fn basis(&self, x: [f64; 2]) -> Vec<f64> {
        let s = 2.0 * self.width * self.width;
        self.centers
            .iter()
            .map(|c| {
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                (-d2 / s).exp()
            })
            .collect()
    }

    /// `κ(x)` for direct (not log) weights.
    pub fn kappa_at(&self, weights: &[f64], x: [f64; 2]) -> f64 {
        self.basis(x).iter().zip(weights).map(|(g, w)| g * w).sum()
    }

    /// Cell-midpoint values for direct weights; no positivity check.
    pub fn cell_values_from_weights(&self, weights: &[f64], mesh: &Mesh) -> Vec<f64> {
        mesh.cell_midpoints()
            .into_iter()
            .map(|x| self.kappa_at(weights, x))
            .collect()
    }

    /// Field for log-weights `v`, so `κ_i = exp(v_i)`.
    pub fn rbf_field(&self, log_weights: &[f64], mesh: &Mesh) -> Result<PermeabilityField> {
        if log_weights.len() != self.dim() {
            return Err(Error::dim("RBF log-weights", self.dim(), log_weights.len()));
        }
        let w: Vec<f64> = log_weights.iter().map(|v| v.exp()).collect();
        PermeabilityField::new(self.cell_values_from_weights(&w, mesh))
    }

    fn field_with_derivatives(
        &self,
        log_weights: &[f64],
        mesh: &Mesh,
    ) -> Result<(PermeabilityField, Vec<Vec<f64>>)> {
        let field = self.rbf_field(log_weights, mesh)?;
        let w: Vec<f64> = log_weights.iter().map(|v| v.exp()).collect();
        let mut derivs = vec![vec![0.0; mesh.num_cells()]; self.dim()];
        for (cell, x) in mesh.cell_midpoints().into_iter().enumerate() {
            for (i, g) in self.basis(x).into_iter().enumerate() {
                derivs[i][cell] = w[i] * g;
            }
        }
        Ok((field, derivs))
    }
}

/// Truncated Karhunen–Loève expansion of a squared-exponential Gaussian
/// field, discretised by Nyström on the mesh nodes with trapezoidal weights.
///
/// The log-permeability is `log κ = Σ v_i √λ_i φ_i`; eigenfunctions are
/// orthonormal under the quadrature inner product.
#[derive(Debug, Clone)]
pub struct KlParameterization {
    variance: f64,
    length: f64,
    cells_per_side: usize,
    eigenvalues: Vec<f64>,
    /// `num_nodes × n`, column `i` is `φ_i` at the nodes.
    modes: DMatrix<f64>,
    /// `num_cells × n`, column `i` is `√λ_i` times the cell average of `φ_i`.
    cell_modes: DMatrix<f64>,
}

/// Squared-exponential kernel `σ² exp(-|x - y|² / (2 l²))`.
pub fn squared_exponential(variance: f64, length: f64, x: [f64; 2], y: [f64; 2]) -> f64 {
    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    variance * (-d2 / (2.0 * length * length)).exp()
}

/// Symmetrically weighted kernel matrix `W^{1/2} C W^{1/2}` on the nodes.
pub fn weighted_kernel_matrix(mesh: &Mesh, variance: f64, length: f64) -> DMatrix<f64> {
    let pts = mesh.node_coordinates();
    let sw: Vec<f64> = mesh.quadrature_weights().iter().map(|w| w.sqrt()).collect();
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| {
        sw[i] * sw[j] * squared_exponential(variance, length, pts[i], pts[j])
    })
}

/// Top-`n` Nyström eigenpairs of the covariance operator on `mesh`.
pub fn kl_decompose(mesh: &Mesh, variance: f64, length: f64, n: usize) -> Result<KlParameterization> {
    let nodes = mesh.num_nodes();
    if n == 0 || n > nodes {
        return Err(Error::InvalidInput(format!(
            "KL mode count must be in 1..={nodes}, got {n}"
        )));
    }
    if !(variance >= 0.0) || !(length > 0.0) {
        return Err(Error::InvalidInput(format!(
            "KL needs variance >= 0 and length > 0, got {variance}, {length}"
        )));
    }
    let eig = SymmetricEigen::new(weighted_kernel_matrix(mesh, variance, length));
    let mut order: Vec<usize> = (0..nodes).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let inv_sw: Vec<f64> = mesh.quadrature_weights().iter().map(|w| 1.0 / w.sqrt()).collect();

    let mut eigenvalues = Vec::with_capacity(n);
    let mut modes = DMatrix::zeros(nodes, n);
    for (col, &k) in order.iter().take(n).enumerate() {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let v = eig.eigenvectors.column(k);
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = v.iamax();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for node in 0..nodes {
            modes[(node, col)] = sign * v[node] * inv_sw[node];
        }
    }
    Ok(KlParameterization::from_parts(
        mesh,
        variance,
        length,
        eigenvalues,
        modes,
    ))
}

impl KlParameterization {
    fn from_parts(
        mesh: &Mesh,
        variance: f64,
        length: f64,
        eigenvalues: Vec<f64>,
        modes: DMatrix<f64>,
    ) -> Self {
        let n = eigenvalues.len();
        let mut cell_modes = DMatrix::zeros(mesh.num_cells(), n);
        for cell in 0..mesh.num_cells() {
            let nodes = mesh.cell_nodes(cell);
            for i in 0..n {
                let avg: f64 = nodes.iter().map(|&k| modes[(k, i)]).sum::<f64>() / 4.0;
                cell_modes[(cell, i)] = eigenvalues[i].sqrt() * avg;
            }
        }
        Self {
            variance,
            length,
            cells_per_side: mesh.cells_per_side(),
            eigenvalues,
            modes,
            cell_modes,
        }
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Nodal eigenfunctions as columns.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    fn check(&self, v: &[f64], mesh: &Mesh) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dim("KL coefficients", self.dim(), v.len()));
        }
        if mesh.cells_per_side() != self.cells_per_side {
            return Err(Error::dim(
                "KL mesh cells per side",
                self.cells_per_side,
                mesh.cells_per_side(),
            ));
        }
        Ok(())
    }

    /// Nodal log-permeability `Σ v_i √λ_i φ_i`.
    pub fn log_kappa_nodal(&self, v: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
        self.check(v, mesh)?;
        let scaled = DVector::from_iterator(
            self.dim(),
            v.iter().zip(&self.eigenvalues).map(|(c, l)| c * l.sqrt()),
        );
        Ok((&self.modes * scaled).as_slice().to_vec())
    }

    /// Per-cell field: exponential of the bilinear log-field at the midpoint.
    pub fn kl_field(&self, v: &[f64], mesh: &Mesh) -> Result<PermeabilityField> {
        self.check(v, mesh)?;
        let log_cells = &self.cell_modes * DVector::from_column_slice(v);
        PermeabilityField::new(log_cells.iter().map(|x| x.exp()).collect())
    }

    fn field_with_derivatives(
        &self,
        v: &[f64],
        mesh: &Mesh,
    ) -> Result<(PermeabilityField, Vec<Vec<f64>>)> {
        let field = self.kl_field(v, mesh)?;
        let derivs = (0..self.dim())
            .map(|i| {
                field
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(c, k)| k * self.cell_modes[(c, i)])
                    .collect()
            })
            .collect();
        Ok((field, derivs))
    }
}

/// How the parameter vector `u` determines the permeability.
#[derive(Debug, Clone)]
pub enum Parameterization {
    Rbf(RbfParameterization),
    Kl(KlParameterization),
    /// One parameter: `κ ≡ exp(u_0)`.
    LogScale,
}

impl Parameterization {
    pub fn dim(&self) -> usize {
        match self {
            Parameterization::Rbf(r) => r.dim(),
            Parameterization::Kl(k) => k.dim(),
            Parameterization::LogScale => 1,
        }
    }

    pub fn field(&self, u: &[f64], mesh: &Mesh) -> Result<PermeabilityField> {
        match self {
            Parameterization::Rbf(r) => r.rbf_field(u, mesh),
            Parameterization::Kl(k) => k.kl_field(u, mesh),
            Parameterization::LogScale => {
                if u.len() != 1 {
                    return Err(Error::dim("log-scale parameter", 1, u.len()));
                }
                PermeabilityField::new(vec![u[0].exp(); mesh.num_cells()])
            }
        }
    }

    /// Field plus `∂κ_cell / ∂u_i` for every parameter `i`.
    pub fn field_with_derivatives(
        &self,
        u: &[f64],
        mesh: &Mesh,
    ) -> Result<(PermeabilityField, Vec<Vec<f64>>)> {
        match self {
            Parameterization::Rbf(r) => r.field_with_derivatives(u, mesh),
            Parameterization::Kl(k) => k.field_with_derivatives(u, mesh),
            Parameterization::LogScale => {
                let f = self.field(u, mesh)?;
                let d = f.values().to_vec();
                Ok((f, vec![d]))
            }
        }
    }

    /// Permeability at the mesh nodes, for plotting and summaries.
    pub fn nodal_kappa(&self, u: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
        match self {
            Parameterization::Rbf(r) => {
                if u.len() != r.dim() {
                    return Err(Error::dim("RBF log-weights", r.dim(), u.len()));
                }
                let w: Vec<f64> = u.iter().map(|v| v.exp()).collect();
                Ok(mesh
                    .node_coordinates()
                    .into_iter()
                    .map(|x| r.kappa_at(&w, x))
                    .collect())
            }
            Parameterization::Kl(k) => Ok(k
                .log_kappa_nodal(u, mesh)?
                .into_iter()
                .map(f64::exp)
                .collect()),
            Parameterization::LogScale => Ok(vec![u[0].exp(); mesh.num_nodes()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_single_weight_direct_formula() {
        let rbf = RbfParameterization::new(vec![[0.5, 0.5]], 0.1).unwrap();
        assert_eq!(rbf.kappa_at(&[1.0], [0.5, 0.5]), 1.0);
        let v = rbf.kappa_at(&[1.0], [0.5, 0.6]);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn rbf_zero_weights_give_zero_field() {
        let mesh = Mesh::new(4).unwrap();
        let rbf = RbfParameterization::default();
        assert_eq!(rbf.dim(), 9);
        let vals = rbf.cell_values_from_weights(&[0.0; 9], &mesh);
        assert!(vals.iter().all(|v| *v == 0.0));
        assert!(PermeabilityField::new(vals).is_err());
    }

    #[test]
    fn kl_zero_variance_and_zero_modes() {
        let mesh = Mesh::new(4).unwrap();
        let kl = kl_decompose(&mesh, 0.0, 0.1, 5).unwrap();
        assert!(kl.eigenvalues().iter().all(|l| *l == 0.0));
        let kl = kl_decompose(&mesh, 1.0, 0.3, 5).unwrap();
        let f = kl.kl_field(&[0.0; 5], &mesh).unwrap();
        assert!(f.values().iter().all(|k| *k == 1.0));
    }

    #[test]
    fn kl_rejects_too_many_modes() {
        let mesh = Mesh::new(2).unwrap();
        assert!(kl_decompose(&mesh, 1.0, 0.1, 10).is_err());
        assert!(kl_decompose(&mesh, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn kl_first_mode_selection() {
        let mesh = Mesh::new(6).unwrap();
        let kl = kl_decompose(&mesh, 1.0, 0.2, 4).unwrap();
        let log_k = kl.log_kappa_nodal(&[1.0, 0.0, 0.0, 0.0], &mesh).unwrap();
        let s = kl.eigenvalues()[0].sqrt();
        for (node, lk) in log_k.iter().enumerate() {
            assert!((lk - s * kl.modes()[(node, 0)]).abs() < 1e-12);
        }
    }
}
