use nalgebra::DMatrix;

use super::mesh::Mesh;
use crate::{Error, Result};

/// Bilinear interpolation of nodal values at a fixed set of sensors.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    sensors: Vec<[f64; 2]>,
    /// Four `(node, weight)` pairs per sensor.
    stencils: Vec<[(usize, f64); 4]>,
    num_nodes: usize,
}

impl ObservationOperator {
    /// Sensors must lie in the closed unit square.
    pub fn new(mesh: &Mesh, sensors: Vec<[f64; 2]>) -> Result<Self> {
        let n = mesh.cells_per_side();
        let h = mesh.h();
        let mut stencils = Vec::with_capacity(sensors.len());
        for s in &sensors {
            if !s.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::InvalidInput(format!(
                    "sensor ({}, {}) lies outside the unit square",
                    s[0], s[1]
                )));
            }
            let locate = |c: f64| {
                let k = ((c / h).floor() as usize).min(n - 1);
                (k, (c / h - k as f64).clamp(0.0, 1.0))
            };
            let (ci, xi) = locate(s[0]);
            let (cj, eta) = locate(s[1]);
            stencils.push([
                (mesh.node_index(ci, cj), (1.0 - xi) * (1.0 - eta)),
                (mesh.node_index(ci + 1, cj), xi * (1.0 - eta)),
                (mesh.node_index(ci + 1, cj + 1), xi * eta),
                (mesh.node_index(ci, cj + 1), (1.0 - xi) * eta),
            ]);
        }
        Ok(Self {
            sensors,
            stencils,
            num_nodes: mesh.num_nodes(),
        })
    }

    pub fn sensors(&self) -> &[[f64; 2]] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn stencil(&self, sensor: usize) -> &[(usize, f64); 4] {
        &self.stencils[sensor]
    }

    /// Interpolated values at the sensors.
    pub fn observe(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        if nodal.len() != self.num_nodes {
            return Err(Error::dim("nodal vector", self.num_nodes, nodal.len()));
        }
        Ok(self
            .stencils
            .iter()
            .map(|st| st.iter().map(|(k, w)| w * nodal[*k]).sum())
            .collect())
    }

    /// Dense `m × num_nodes` interpolation matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.len(), self.num_nodes);
        for (row, st) in self.stencils.iter().enumerate() {
            for (k, w) in st {
                b[(row, *k)] += w;
            }
        }
        b
    }
}

/// `per_side × per_side` grid of sensors spanning `[lo, hi]²`.
pub fn grid_sensors(lo: f64, hi: f64, per_side: usize) -> Vec<[f64; 2]> {
    let tick = |k: usize| {
        if per_side == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (per_side - 1) as f64
        }
    };
    (0..per_side)
        .flat_map(|j| (0..per_side).map(move |i| [tick(i), tick(j)]))
        .collect()
}

/// Default 71-sensor layout: an 8 × 8 grid on `[0.1, 0.9]²` plus seven
/// points next to the flux faces and the outflow face.
pub fn benchmark_sensors() -> Vec<[f64; 2]> {
    let mut s = grid_sensors(0.1, 0.9, 8);
    s.extend_from_slice(&[
        [0.2, 0.03],
        [0.5, 0.03],
        [0.8, 0.03],
        [0.2, 0.97],
        [0.5, 0.97],
        [0.8, 0.97],
        [0.97, 0.5],
    ]);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_node_exactness() {
        let mesh = Mesh::new(10).unwrap();
        let op = ObservationOperator::new(&mesh, benchmark_sensors()).unwrap();
        assert_eq!(op.len(), 71);
        for i in 0..op.len() {
            let s: f64 = op.stencil(i).iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        let obs = op.observe(&vec![5.0; mesh.num_nodes()]).unwrap();
        assert!(obs.iter().all(|o| (o - 5.0).abs() < 1e-14));

        let nodal: Vec<f64> = (0..mesh.num_nodes()).map(|k| (k as f64).sqrt()).collect();
        let on_node = ObservationOperator::new(&mesh, vec![[0.3, 0.7], [1.0, 1.0], [0.0, 0.0]]).unwrap();
        let got = on_node.observe(&nodal).unwrap();
        let expect = [nodal[mesh.node_index(3, 7)], nodal[mesh.node_index(10, 10)], nodal[0]];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_center_is_corner_average() {
        let mesh = Mesh::new(2).unwrap();
        let op = ObservationOperator::new(&mesh, vec![[0.25, 0.25]]).unwrap();
        let mut nodal = vec![0.0; 9];
        for (k, v) in mesh.cell_nodes(0).iter().zip([1.0, 2.0, 3.0, 4.0]) {
            nodal[*k] = v;
        }
        assert!((op.observe(&nodal).unwrap()[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_outside_sensor() {
        let mesh = Mesh::new(4).unwrap();
        assert!(ObservationOperator::new(&mesh, vec![[1.01, 0.5]]).is_err());
        assert!(ObservationOperator::new(&mesh, vec![[0.5, -0.1]]).is_err());
    }

    #[test]
    fn example_two_grid_has_81_sensors() {
        let s = grid_sensors(0.1, 0.9, 9);
        assert_eq!(s.len(), 81);
        assert!((s[1][0] - 0.2).abs() < 1e-15);
    }
}
