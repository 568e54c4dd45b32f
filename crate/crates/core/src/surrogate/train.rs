use nalgebra::{DMatrix, DVector};

use super::mlp::{swish, swish_derivative, MlpArchitecture, MlpSurrogate};
use crate::{Error, Result};

/// Paired inputs and targets, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    /// Forward-model evaluations spent building the set.
    pub evaluations: usize,
}

impl TrainingSet {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != targets.ncols() {
            return Err(Error::dim("training targets", inputs.ncols(), targets.ncols()));
        }
        if inputs.ncols() == 0 {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        if inputs.iter().chain(targets.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("training data".into()));
        }
        let evaluations = inputs.ncols();
        Ok(Self {
            inputs,
            targets,
            evaluations,
        })
    }

    pub fn from_pairs(pairs: &[(DVector<f64>, DVector<f64>)]) -> Result<Self> {
        let Some((x0, y0)) = pairs.first() else {
            return Err(Error::InvalidInput("training set is empty".into()));
        };
        let (n, m) = (x0.len(), y0.len());
        for (x, y) in pairs {
            if x.len() != n {
                return Err(Error::dim("training input", n, x.len()));
            }
            if y.len() != m {
                return Err(Error::dim("training target", m, y.len()));
            }
        }
        let inputs = DMatrix::from_fn(n, pairs.len(), |i, j| pairs[j].0[i]);
        let targets = DMatrix::from_fn(m, pairs.len(), |i, j| pairs[j].1[i]);
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.nrows()
    }
}

/// Full-batch Adam settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_tol: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 20_000,
            loss_tol: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput("Adam decay rates must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || self.loss_tol < 0.0 {
            return Err(Error::InvalidInput("epsilon must be positive and loss_tol non-negative".into()));
        }
        Ok(())
    }
}

/// Parameter gradients in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Mean squared error `(1/N) Σ_i |y_i − NN(x_i)|²` and its gradient with
/// respect to every weight and bias, by backpropagation over the batch.
pub fn loss_and_gradient(net: &MlpSurrogate, data: &TrainingSet) -> Result<(f64, Gradients)> {
    check_shapes(net, data)?;
    let layers = net.layers();
    let last = layers.len() - 1;
    let n = data.len() as f64;

    let mut acts = Vec::with_capacity(layers.len() + 1);
    let mut pre = Vec::with_capacity(layers.len());
    acts.push(data.inputs.clone());
    for (k, l) in layers.iter().enumerate() {
        let mut a = &l.weights * &acts[k];
        for mut col in a.column_iter_mut() {
            col += &l.bias;
        }
        if k < last {
            acts.push(a.map(swish));
        }
        pre.push(a);
    }
    let resid = &pre[last] - &data.targets;
    let loss = resid.norm_squared() / n;

    let mut g = resid * (2.0 / n);
    let mut weights = vec![DMatrix::zeros(0, 0); layers.len()];
    let mut biases = vec![DVector::zeros(0); layers.len()];
    for k in (0..=last).rev() {
        weights[k] = &g * acts[k].transpose();
        biases[k] = g.column_sum();
        if k > 0 {
            let mut back = layers[k].weights.tr_mul(&g);
            back.zip_apply(&pre[k - 1], |b, a| *b *= swish_derivative(a));
            g = back;
        }
    }
    Ok((loss, Gradients { weights, biases }))
}

pub fn loss(net: &MlpSurrogate, data: &TrainingSet) -> Result<f64> {
    check_shapes(net, data)?;
    let mut sum = 0.0;
    for j in 0..data.len() {
        let y = net.forward(&data.inputs.column(j).into_owned())?;
        sum += (y - data.targets.column(j)).norm_squared();
    }
    Ok(sum / data.len() as f64)
}

fn check_shapes(net: &MlpSurrogate, data: &TrainingSet) -> Result<()> {
    if data.input_dim() != net.input_dim() {
        return Err(Error::dim("training input", net.input_dim(), data.input_dim()));
    }
    if data.output_dim() != net.output_dim() {
        return Err(Error::dim("training target", net.output_dim(), data.output_dim()));
    }
    Ok(())
}

/// Adam moment estimates for a flat sequence of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(opts: &TrainOptions, sizes: &[usize]) -> Self {
        Self {
            beta1: opts.beta1,
            beta2: opts.beta2,
            epsilon: opts.epsilon,
            learning_rate: opts.learning_rate,
            step: 0,
            first: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Advances the step counter; call once before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of tensor `slot`.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Trains a freshly initialised network of shape `arch`.
pub fn train(arch: &MlpArchitecture, data: &TrainingSet, opts: &TrainOptions) -> Result<MlpSurrogate> {
    let net = MlpSurrogate::init(arch, opts.seed)?;
    train_from(net, data, opts)
}

/// Continues full-batch Adam from the given parameters. Stops after
/// `opts.epochs` epochs or once the loss falls below `opts.loss_tol`.
pub fn train_from(mut net: MlpSurrogate, data: &TrainingSet, opts: &TrainOptions) -> Result<MlpSurrogate> {
    opts.validate()?;
    check_shapes(&net, data)?;
    let sizes: Vec<usize> = net
        .layers()
        .iter()
        .flat_map(|l| [l.weights.len(), l.bias.len()])
        .collect();
    let mut adam = Adam::new(opts, &sizes);
    let mut history = Vec::with_capacity(opts.epochs.min(100_000));
    let mut last_loss = f64::NAN;
    let mut epoch = 0;
    while epoch < opts.epochs {
        let (l, grads) = loss_and_gradient(&net, data)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        history.push(l);
        last_loss = l;
        if l < opts.loss_tol {
            break;
        }
        adam.begin_step();
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            adam.update(2 * k, layer.weights.as_mut_slice(), grads.weights[k].as_slice());
            adam.update(2 * k + 1, layer.bias.as_mut_slice(), grads.biases[k].as_slice());
        }
        epoch += 1;
    }
    if epoch == opts.epochs {
        last_loss = loss(&net, data)?;
        if !last_loss.is_finite() {
            return Err(Error::NonFinite("training loss after final epoch".into()));
        }
    }
    log::debug!("training stopped after {epoch} epochs, loss {last_loss:.3e}");
    net.loss_history = history;
    net.final_loss = last_loss;
    net.epochs = epoch;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::Layer;

    fn toy_data() -> TrainingSet {
        let x = DMatrix::from_fn(2, 30, |i, j| ((i * 31 + j * 7) as f64 * 0.37).sin());
        let y = DMatrix::from_fn(3, 30, |i, j| x[(0, j)] * (i as f64 + 1.0) - x[(1, j)].powi(2));
        TrainingSet::new(x, y).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_data();
        let arch = MlpArchitecture::new(2, 3, 2, 5).unwrap();
        let net = MlpSurrogate::init(&arch, 4).unwrap();
        let (_, g) = loss_and_gradient(&net, &data).unwrap();
        let h = 1e-6;
        for k in 0..net.layers().len() {
            for idx in [0, net.layers()[k].weights.len() - 1] {
                let mut p = net.clone();
                p.layers_mut()[k].weights.as_mut_slice()[idx] += h;
                let mut q = net.clone();
                q.layers_mut()[k].weights.as_mut_slice()[idx] -= h;
                let fd = (loss(&p, &data).unwrap() - loss(&q, &data).unwrap()) / (2.0 * h);
                let an = g.weights[k].as_slice()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "W{k}[{idx}] {fd} vs {an}");
            }
            let mut p = net.clone();
            p.layers_mut()[k].bias[0] += h;
            let mut q = net.clone();
            q.layers_mut()[k].bias[0] -= h;
            let fd = (loss(&p, &data).unwrap() - loss(&q, &data).unwrap()) / (2.0 * h);
            assert!((fd - g.biases[k][0]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn batched_loss_matches_per_sample_loss() {
        let data = toy_data();
        let net = MlpSurrogate::init(&MlpArchitecture::new(2, 3, 3, 4).unwrap(), 2).unwrap();
        let (a, _) = loss_and_gradient(&net, &data).unwrap();
        let b = loss(&net, &data).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + b));
    }

    #[test]
    fn first_adam_step_is_sign_scaled() {
        let opts = TrainOptions::default();
        let mut adam = Adam::new(&opts, &[3]);
        let mut p = [1.0, 2.0, 3.0];
        let g = [0.5, -2.0, 1e-3];
        adam.begin_step();
        adam.update(0, &mut p, &g);
        for i in 0..3 {
            let expect = [1.0, 2.0, 3.0][i] - 5e-4 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_decreases_on_smooth_target() {
        let data = toy_data();
        let arch = MlpArchitecture::new(2, 3, 2, 16).unwrap();
        let opts = TrainOptions {
            epochs: 2000,
            learning_rate: 5e-3,
            ..Default::default()
        };
        let net = train(&arch, &data, &opts).unwrap();
        assert_eq!(net.loss_history.len(), 2000);
        assert!(net.final_loss < 0.1 * net.loss_history[0]);
    }

    #[test]
    fn zero_output_layer_on_zero_targets_stops_immediately() {
        let x = DMatrix::from_fn(2, 5, |i, j| (i + j) as f64);
        let data = TrainingSet::new(x, DMatrix::zeros(1, 5)).unwrap();
        let mut net = MlpSurrogate::init(&MlpArchitecture::new(2, 1, 1, 3).unwrap(), 0).unwrap();
        net.layers_mut()[1] = Layer {
            weights: DMatrix::zeros(1, 3),
            bias: DVector::zeros(1),
        };
        let before = net.layers()[1].clone();
        let out = train_from(net, &data, &TrainOptions::default()).unwrap();
        assert_eq!(out.loss_history, vec![0.0]);
        assert_eq!(out.layers()[1], before);
    }

    #[test]
    fn same_seed_same_network() {
        let data = toy_data();
        let arch = MlpArchitecture::new(2, 3, 1, 4).unwrap();
        let opts = TrainOptions {
            epochs: 50,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(train(&arch, &data, &opts).unwrap(), train(&arch, &data, &opts).unwrap());
    }
}
