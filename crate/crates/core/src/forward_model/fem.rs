//! Galerkin bilinear finite elements for `-div(κ ∇p) = s` on the unit square.
//!
//! The permeability is piecewise constant, one value per cell (taken at the
//! cell midpoint), and the element gradient integrals are exact. Sources are
//! given as nodal values and loaded with the consistent mass matrix.

use nalgebra::DMatrix;

use super::banded::{BandCholesky, SymBand};
use super::field::PermeabilityField;
use super::mesh::Mesh;
use crate::{Error, Result};

/// Exact `∫ ∇φ_a · ∇φ_b` on a square bilinear element (any side length).
const STIFFNESS_REF: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// `∫ φ_a φ_b` on the unit-side element; scale by `h²`.
const MASS_REF: [[f64; 4]; 4] = [
    [4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0],
    [1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0],
];

/// Affine boundary profile `c0 + c1 x1 + c2 x2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Affine {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Affine {
    pub const ZERO: Affine = Affine::constant(0.0);

    pub const fn constant(c0: f64) -> Self {
        Self {
            c0,
            c1: 0.0,
            c2: 0.0,
        }
    }

    pub const fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2 }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.c0 + self.c1 * x[0] + self.c2 * x[1]
    }
}

/// Condition imposed on one face of the square.
///
/// `Neumann` carries the outward co-normal flux `κ ∂p/∂n`, which enters the
/// weak form as a boundary load. `NormalDerivative` prescribes `∂p/∂n`
/// itself, so its load is weighted by the permeability of the adjacent cell.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum FaceCondition {
    Dirichlet(Affine),
    Neumann(Affine),
    NormalDerivative(Affine),
}

/// Conditions on the four faces. Where a Dirichlet face meets a Neumann face
/// the corner node is Dirichlet.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundaryConditions {
    /// `x1 = 0`
    pub left: FaceCondition,
    /// `x1 = 1`
    pub right: FaceCondition,
    /// `x2 = 0`
    pub bottom: FaceCondition,
    /// `x2 = 1`
    pub top: FaceCondition,
}

impl BoundaryConditions {
    /// `p = 1` at `x1 = 0`, `p = 0` at `x1 = 1`, `∂p/∂x2 = x1` at `x2 = 0`
    /// and `∂p/∂x2 = 1 - x1` at `x2 = 1`. The outward normal flips the sign
    /// on the bottom face.
    pub fn benchmark() -> Self {
        Self {
            left: FaceCondition::Dirichlet(Affine::constant(1.0)),
            right: FaceCondition::Dirichlet(Affine::constant(0.0)),
            bottom: FaceCondition::Neumann(Affine::new(0.0, -1.0, 0.0)),
            top: FaceCondition::Neumann(Affine::new(1.0, -1.0, 0.0)),
        }
    }

    /// [`BoundaryConditions::benchmark`] with the `x2`-face values read as
    /// normal derivatives rather than fluxes.
    pub fn benchmark_normal_derivative() -> Self {
        Self {
            bottom: FaceCondition::NormalDerivative(Affine::new(0.0, -1.0, 0.0)),
            top: FaceCondition::NormalDerivative(Affine::new(1.0, -1.0, 0.0)),
            ..Self::benchmark()
        }
    }

    pub fn homogeneous_dirichlet() -> Self {
        let d = FaceCondition::Dirichlet(Affine::ZERO);
        Self {
            left: d,
            right: d,
            bottom: d,
            top: d,
        }
    }

    /// Zero Dirichlet on the `x1` faces, zero flux on the `x2` faces.
    pub fn dirichlet_x1_zero_flux_x2() -> Self {
        Self {
            left: FaceCondition::Dirichlet(Affine::ZERO),
            right: FaceCondition::Dirichlet(Affine::ZERO),
            bottom: FaceCondition::Neumann(Affine::ZERO),
            top: FaceCondition::Neumann(Affine::ZERO),
        }
    }

    fn faces(&self) -> [FaceCondition; 4] {
        [self.left, self.right, self.bottom, self.top]
    }

    fn has_dirichlet(&self) -> bool {
        self.faces()
            .iter()
            .any(|f| matches!(f, FaceCondition::Dirichlet(_)))
    }

    /// Dirichlet value at a node, if the node is constrained.
    fn dirichlet_at(&self, mesh: &Mesh, node: usize) -> Option<f64> {
        let (i, j) = mesh.node_grid_position(node);
        let last = mesh.cells_per_side();
        let x = mesh.node_coords(node);
        let on = [i == 0, i == last, j == 0, j == last];
        self.faces()
            .iter()
            .zip(on)
            .find_map(|(face, hit)| match (face, hit) {
                (FaceCondition::Dirichlet(g), true) => Some(g.eval(x)),
                _ => None,
            })
    }
}

/// Degree-of-freedom layout after Dirichlet elimination.
#[derive(Debug, Clone)]
struct DofMap {
    /// Free index for each node, `None` on Dirichlet nodes.
    free: Vec<Option<usize>>,
    /// Dirichlet values (zero on free nodes).
    fixed_values: Vec<f64>,
    num_free: usize,
    bandwidth: usize,
}

impl DofMap {
    fn new(mesh: &Mesh, bc: &BoundaryConditions) -> Self {
        let mut free = vec![None; mesh.num_nodes()];
        let mut fixed_values = vec![0.0; mesh.num_nodes()];
        let mut num_free = 0;
        for node in 0..mesh.num_nodes() {
            match bc.dirichlet_at(mesh, node) {
                Some(g) => fixed_values[node] = g,
                None => {
                    free[node] = Some(num_free);
                    num_free += 1;
                }
            }
        }
        let mut bandwidth = 0;
        for cell in 0..mesh.num_cells() {
            let ids: Vec<usize> = mesh
                .cell_nodes(cell)
                .iter()
                .filter_map(|&n| free[n])
                .collect();
            for &a in &ids {
                for &b in &ids {
                    bandwidth = bandwidth.max(a.abs_diff(b));
                }
            }
        }
        Self {
            free,
            fixed_values,
            num_free,
            bandwidth,
        }
    }
}

/// Assembled and factorised system for one permeability field.
///
/// Keeps the factor so that sensitivity right-hand sides can be solved
/// without refactorising.
#[derive(Debug, Clone)]
pub struct FemSolution {
    mesh: Mesh,
    bc: BoundaryConditions,
    dofs: DofMap,
    factor: BandCholesky,
    pressure: Vec<f64>,
}

impl FemSolution {
    /// Nodal pressure, including Dirichlet values.
    pub fn pressure(&self) -> &[f64] {
        &self.pressure
    }

    pub fn into_pressure(self) -> Vec<f64> {
        self.pressure
    }

    /// Cholesky pivots of the reduced stiffness matrix.
    pub fn pivots(&self) -> Vec<f64> {
        self.factor.pivots()
    }

    /// Nodal derivative of the pressure for a perturbation `dkappa` of the
    /// per-cell permeability: solves `K dp = d(load) - (dK) p` on the free
    /// nodes. The load term is non-zero only for `NormalDerivative` faces.
    pub fn sensitivity(&self, dkappa: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.dofs.num_free];
        for (cell, &dk) in dkappa.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            let nodes = self.mesh.cell_nodes(cell);
            let pc = nodes.map(|n| self.pressure[n]);
            for a in 0..4 {
                if let Some(fa) = self.dofs.free[nodes[a]] {
                    let kp: f64 = (0..4).map(|b| STIFFNESS_REF[a][b] * pc[b]).sum();
                    rhs[fa] -= dk * kp;
                }
            }
        }
        for edge in boundary_edges(&self.mesh, &self.bc) {
            let dk = dkappa[edge.cell];
            if !edge.weighted || dk == 0.0 {
                continue;
            }
            if let Some(fa) = self.dofs.free[edge.nodes.0] {
                rhs[fa] += dk * edge.loads.0;
            }
            if let Some(fb) = self.dofs.free[edge.nodes.1] {
                rhs[fb] += dk * edge.loads.1;
            }
        }
        self.factor.solve_in_place(&mut rhs);
        let mut dp = vec![0.0; self.mesh.num_nodes()];
        for (node, f) in self.dofs.free.iter().enumerate() {
            if let Some(f) = f {
                dp[node] = rhs[*f];
            }
        }
        dp
    }
}

fn check_inputs(mesh: &Mesh, field: &PermeabilityField, source: &[f64]) -> Result<()> {
    if field.len() != mesh.num_cells() {
        return Err(Error::dim("permeability cells", mesh.num_cells(), field.len()));
    }
    if source.len() != mesh.num_nodes() {
        return Err(Error::dim("source nodes", mesh.num_nodes(), source.len()));
    }
    if let Some(bad) = field.values().iter().find(|k| !(**k > 0.0) || !k.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "permeability must be positive and finite, found {bad}"
        )));
    }
    Ok(())
}

/// One boundary edge carrying Neumann-type data: its end nodes, the
/// adjacent cell and the unweighted loads on both ends.
struct BoundaryEdge {
    nodes: (usize, usize),
    cell: usize,
    loads: (f64, f64),
    weighted: bool,
}

/// Edge loads for every Neumann-type face. A linear profile integrates
/// exactly against the 1-D consistent mass.
fn boundary_edges(mesh: &Mesh, bc: &BoundaryConditions) -> Vec<BoundaryEdge> {
    let n = mesh.cells_per_side();
    let h = mesh.h();
    let mut out = Vec::new();
    for (face, cond) in bc.faces().iter().enumerate() {
        let (g, weighted) = match cond {
            FaceCondition::Neumann(g) => (g, false),
            FaceCondition::NormalDerivative(g) => (g, true),
            FaceCondition::Dirichlet(_) => continue,
        };
        for k in 0..n {
            let (a, b, cell) = match face {
                0 => (mesh.node_index(0, k), mesh.node_index(0, k + 1), k * n),
                1 => (mesh.node_index(n, k), mesh.node_index(n, k + 1), k * n + n - 1),
                2 => (mesh.node_index(k, 0), mesh.node_index(k + 1, 0), k),
                _ => (mesh.node_index(k, n), mesh.node_index(k + 1, n), (n - 1) * n + k),
            };
            let ga = g.eval(mesh.node_coords(a));
            let gb = g.eval(mesh.node_coords(b));
            out.push(BoundaryEdge {
                nodes: (a, b),
                cell,
                loads: (h / 6.0 * (2.0 * ga + gb), h / 6.0 * (ga + 2.0 * gb)),
                weighted,
            });
        }
    }
    out
}

fn load_vector(
    mesh: &Mesh,
    bc: &BoundaryConditions,
    dofs: &DofMap,
    field: &PermeabilityField,
    source: &[f64],
) -> Vec<f64> {
    let h = mesh.h();
    let mut rhs = vec![0.0; dofs.num_free];
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(cell);
        for a in 0..4 {
            if let Some(fa) = dofs.free[nodes[a]] {
                let s: f64 = (0..4).map(|b| MASS_REF[a][b] * source[nodes[b]]).sum();
                rhs[fa] += h * h * s;
            }
        }
    }
    for edge in boundary_edges(mesh, bc) {
        let scale = if edge.weighted { field.values()[edge.cell] } else { 1.0 };
        if let Some(fa) = dofs.free[edge.nodes.0] {
            rhs[fa] += scale * edge.loads.0;
        }
        if let Some(fb) = dofs.free[edge.nodes.1] {
            rhs[fb] += scale * edge.loads.1;
        }
    }
    rhs
}

/// Assembles the reduced stiffness system, solves it and keeps the factor.
pub fn solve_system(
    mesh: &Mesh,
    field: &PermeabilityField,
    source: &[f64],
    bc: &BoundaryConditions,
) -> Result<FemSolution> {
    check_inputs(mesh, field, source)?;
    if !bc.has_dirichlet() {
        return Err(Error::InvalidInput(
            "at least one Dirichlet face is required".into(),
        ));
    }
    let dofs = DofMap::new(mesh, bc);
    let mut stiffness = SymBand::zeros(dofs.num_free, dofs.bandwidth);
    let mut rhs = load_vector(mesh, bc, &dofs, field, source);
    for (cell, &kappa) in field.values().iter().enumerate() {
        let nodes = mesh.cell_nodes(cell);
        for a in 0..4 {
            let Some(fa) = dofs.free[nodes[a]] else {
                continue;
            };
            for b in 0..4 {
                let k = kappa * STIFFNESS_REF[a][b];
                match dofs.free[nodes[b]] {
                    Some(fb) if fb <= fa => stiffness.add(fa, fb, k),
                    Some(_) => {}
                    None => rhs[fa] -= k * dofs.fixed_values[nodes[b]],
                }
            }
        }
    }
    let factor = stiffness.cholesky()?;
    factor.solve_in_place(&mut rhs);
    let mut pressure = dofs.fixed_values.clone();
    for (node, f) in dofs.free.iter().enumerate() {
        if let Some(f) = f {
            pressure[node] = rhs[*f];
        }
    }
    Ok(FemSolution {
        mesh: *mesh,
        bc: *bc,
        dofs,
        factor,
        pressure,
    })
}

/// Nodal pressure for the given field, source and boundary conditions.
pub fn assemble_and_solve(
    mesh: &Mesh,
    field: &PermeabilityField,
    source: &[f64],
    bc: &BoundaryConditions,
) -> Result<Vec<f64>> {
    solve_system(mesh, field, source, bc).map(FemSolution::into_pressure)
}

/// Dense reduced stiffness matrix, assembled entry by entry on both
/// triangles. Intended for inspection and tests on small meshes.
pub fn assemble_free_dense(
    mesh: &Mesh,
    field: &PermeabilityField,
    bc: &BoundaryConditions,
) -> DMatrix<f64> {
    let dofs = DofMap::new(mesh, bc);
    let mut k = DMatrix::zeros(dofs.num_free, dofs.num_free);
    for (cell, &kappa) in field.values().iter().enumerate() {
        let nodes = mesh.cell_nodes(cell);
        for a in 0..4 {
            for b in 0..4 {
                if let (Some(fa), Some(fb)) = (dofs.free[nodes[a]], dofs.free[nodes[b]]) {
                    k[(fa, fb)] += kappa * STIFFNESS_REF[a][b];
                }
            }
        }
    }
    k
}
