use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::bayes::MisfitMap;
use crate::rng;
use crate::{Error, Result};

/// `z / (1 + e^{-z})`.
#[inline]
pub fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

/// `d/dz swish(z) = s + z s (1 - s)` with `s` the logistic sigmoid.
#[inline]
pub fn swish_derivative(z: f64) -> f64 {
    let s = sigmoid(z);
    s + z * s * (1.0 - s)
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Widths of a fully connected Swish network.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpArchitecture {
    pub input: usize,
    pub output: usize,
    pub hidden: Vec<usize>,
}

impl MlpArchitecture {
    /// `layers` hidden layers of `width` neurons each.
    pub fn new(input: usize, output: usize, layers: usize, width: usize) -> Result<Self> {
        let arch = Self {
            input,
            output,
            hidden: vec![width; layers],
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidInput("network needs at least one hidden layer".into()));
        }
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidInput("all layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Input, hidden and output widths in order.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

/// Affine layer `z ↦ W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Feedforward network `F_L ∘ σ ∘ … ∘ σ ∘ F_1` with Swish `σ` and an
/// identity output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSurrogate {
    layers: Vec<Layer>,
    /// Loss at each training epoch, before that epoch's update.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
    pub epochs: usize,
}

impl MlpSurrogate {
    /// Network from explicit layers; consecutive shapes must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::dim("layer bias", l.weights.nrows(), l.bias.len()));
            }
            if k > 0 && l.weights.ncols() != layers[k - 1].weights.nrows() {
                return Err(Error::dim("layer input", layers[k - 1].weights.nrows(), l.weights.ncols()));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {k}")));
            }
        }
        Ok(Self {
            layers,
            loss_history: Vec::new(),
            final_loss: f64::NAN,
            epochs: 0,
        })
    }

    /// Random initialisation `W ~ N(0, 1/fan_in)`, `b = 0`.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let mut r = rng::stream(seed, rng::INIT, 0);
        let layers = widths
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (1.0 / w[0] as f64).sqrt()).expect("positive std");
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(&mut r)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weights.nrows()));
        w
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), v.len()));
        }
        Ok(())
    }

    /// Pre-activations of every layer for one input.
    fn pre_activations(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut z = v.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let a = &l.weights * &z + &l.bias;
            if k + 1 < self.layers.len() {
                z = a.map(swish);
            }
            pre.push(a);
        }
        pre
    }

    pub fn forward(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(v)?;
        let mut z = v.clone();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let a = &l.weights * &z + &l.bias;
            z = if k < last { a.map(swish) } else { a };
        }
        Ok(z)
    }

    /// Output and `m × n` input Jacobian. Uses whichever accumulation order
    /// is cheaper for the shape; both are exact.
    pub fn forward_and_input_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_input(v)?;
        let pre = self.pre_activations(v);
        let out = pre.last().expect("non-empty").clone();
        let jac = if self.input_dim() <= self.output_dim() {
            self.jacobian_forward_mode(&pre)
        } else {
            self.jacobian_reverse_mode(&pre)
        };
        Ok((out, jac))
    }

    pub fn input_jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.forward_and_input_jacobian(v).map(|(_, j)| j)
    }

    /// Reverse accumulation: `W_L D_{L-1} W_{L-1} … D_1 W_1`, multiplied
    /// from the output side.
    pub fn input_jacobian_reverse(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(v)?;
        Ok(self.jacobian_reverse_mode(&self.pre_activations(v)))
    }

    /// Forward accumulation of the same product from the input side.
    pub fn input_jacobian_forward(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(v)?;
        Ok(self.jacobian_forward_mode(&self.pre_activations(v)))
    }

    fn jacobian_reverse_mode(&self, pre: &[DVector<f64>]) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut adj = self.layers[last].weights.clone();
        for k in (0..last).rev() {
            let d = pre[k].map(swish_derivative);
            for (j, mut col) in adj.column_iter_mut().enumerate() {
                col *= d[j];
            }
            adj = &adj * &self.layers[k].weights;
        }
        adj
    }

    fn jacobian_forward_mode(&self, pre: &[DVector<f64>]) -> DMatrix<f64> {
        let mut tan = self.layers[0].weights.clone();
        for k in 1..self.layers.len() {
            let d = pre[k - 1].map(swish_derivative);
            for (i, mut row) in tan.row_iter_mut().enumerate() {
                row *= d[i];
            }
            tan = &self.layers[k].weights * tan;
        }
        tan
    }
}

impl MisfitMap for MlpSurrogate {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn num_obs(&self) -> usize {
        self.output_dim()
    }

    fn misfit(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(v)
    }

    fn misfit_and_jacobian(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.forward_and_input_jacobian(v)
    }
}
