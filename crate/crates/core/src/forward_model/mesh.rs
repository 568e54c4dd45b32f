/// Uniform square grid on the unit square with bilinear cells.
///
/// Nodes are numbered with `x1` varying fastest: node `(i, j)` has index
/// `j * (n + 1) + i` and sits at `(i h, j h)` with `h = 1 / n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mesh {
    cells_per_side: usize,
}

impl Mesh {
    pub fn new(cells_per_side: usize) -> crate::Result<Self> {
        if cells_per_side == 0 {
            return Err(crate::Error::InvalidInput(
                "mesh needs at least one cell per side".into(),
            ));
        }
        Ok(Self { cells_per_side })
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn nodes_per_side(&self) -> usize {
        self.cells_per_side + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells_per_side as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let np = self.nodes_per_side();
        let h = self.h();
        [(node % np) as f64 * h, (node / np) as f64 * h]
    }

    pub fn node_grid_position(&self, node: usize) -> (usize, usize) {
        let np = self.nodes_per_side();
        (node % np, node / np)
    }

    /// Corner nodes of cell `(ci, cj)` counter-clockwise from the lower left.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let n = self.cells_per_side;
        let (ci, cj) = (cell % n, cell / n);
        [
            self.node_index(ci, cj),
            self.node_index(ci + 1, cj),
            self.node_index(ci + 1, cj + 1),
            self.node_index(ci, cj + 1),
        ]
    }

    pub fn cell_midpoint(&self, cell: usize) -> [f64; 2] {
        let n = self.cells_per_side;
        let h = self.h();
        [
            ((cell % n) as f64 + 0.5) * h,
            ((cell / n) as f64 + 0.5) * h,
        ]
    }

    pub fn cell_midpoints(&self) -> Vec<[f64; 2]> {
        (0..self.num_cells()).map(|c| self.cell_midpoint(c)).collect()
    }

    pub fn node_coordinates(&self) -> Vec<[f64; 2]> {
        (0..self.num_nodes()).map(|k| self.node_coords(k)).collect()
    }

    /// Tensor trapezoidal quadrature weights at the nodes; they sum to 1.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let np = self.nodes_per_side();
        let h = self.h();
        let w1 = |i: usize| if i == 0 || i + 1 == np { 0.5 * h } else { h };
        (0..self.num_nodes())
            .map(|k| w1(k % np) * w1(k / np))
            .collect()
    }

    /// Evaluates `g` at every node.
    pub fn interpolate<F: Fn(f64, f64) -> f64>(&self, g: F) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|k| {
                let [x, y] = self.node_coords(k);
                g(x, y)
            })
            .collect()
    }
}
