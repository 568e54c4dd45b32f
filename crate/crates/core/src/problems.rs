//! Benchmark inverse problems and synthetic data.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bayes::{ForwardMap, LinearMap, WhitenedProblem};
use crate::forward_model::{
    benchmark_sensors, benchmark_source, grid_sensors, kl_decompose, BoundaryConditions,
    ForwardProblem, Mesh, ObservationOperator, Parameterization, RbfParameterization,
};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    /// Nine radial basis functions with log-normal weights.
    Rbf9,
    /// Truncated Karhunen–Loève log-permeability.
    Kl,
    /// Six-parameter linear-Gaussian model.
    Linear,
}

/// Meaning of the values prescribed on the `x2` faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeumannData {
    /// Co-normal flux `κ ∂p/∂n`.
    #[default]
    Flux,
    /// Normal derivative `∂p/∂n`.
    Derivative,
}

/// `[problem]` section of a run config. Unset optional fields take the
/// per-example defaults listed on each accessor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub example: Example,
    pub mesh: usize,
    /// Relative noise level; noise std is `delta · max |F(u_true)|`.
    pub delta: Option<f64>,
    /// Absolute noise std; takes precedence over `delta`.
    pub noise_std: Option<f64>,
    pub kl_variance: f64,
    pub kl_length: f64,
    pub kl_modes: usize,
    pub sensors: Option<Vec<[f64; 2]>>,
    pub neumann: NeumannData,
    pub linear_params: usize,
    pub linear_obs: usize,
    /// Seed for the true parameters and the data noise.
    pub data_seed: u64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            example: Example::Rbf9,
            mesh: 40,
            delta: None,
            noise_std: None,
            kl_variance: 1.0,
            kl_length: 0.1,
            kl_modes: 120,
            sensors: None,
            neumann: NeumannData::Flux,
            linear_params: 6,
            linear_obs: 10,
            data_seed: 2021,
        }
    }
}

/// How the noise standard deviation is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Relative(f64),
    Absolute(f64),
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("problem.{m}")));
        if self.mesh < 2 {
            return bad("mesh must be at least 2");
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return bad("delta must be finite and non-negative");
            }
        }
        if let Some(s) = self.noise_std {
            if !(s > 0.0 && s.is_finite()) {
                return bad("noise_std must be positive");
            }
        }
        if !(self.kl_variance >= 0.0) || !(self.kl_length > 0.0) {
            return bad("kl_variance must be non-negative and kl_length positive");
        }
        if self.example == Example::Kl && (self.kl_modes == 0 || self.kl_modes > (self.mesh + 1).pow(2)) {
            return bad("kl_modes must lie between 1 and the number of mesh nodes");
        }
        if self.linear_params == 0 || self.linear_obs == 0 {
            return bad("linear_params and linear_obs must be positive");
        }
        if let Some(s) = &self.sensors {
            if s.is_empty() {
                return bad("sensors must not be empty");
            }
            if s.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
                return bad("sensors must lie in the unit square");
            }
        }
        Ok(())
    }

    /// Relative 0.05 for `rbf9`; absolute 0.05 for `kl`, 0.1 for `linear`.
    pub fn noise_model(&self) -> NoiseModel {
        match (self.noise_std, self.delta, self.example) {
            (Some(s), _, _) => NoiseModel::Absolute(s),
            (None, Some(d), _) => NoiseModel::Relative(d),
            (None, None, Example::Rbf9) => NoiseModel::Relative(0.05),
            (None, None, Example::Kl) => NoiseModel::Absolute(0.05),
            (None, None, Example::Linear) => NoiseModel::Absolute(0.1),
        }
    }

    /// 71 benchmark sensors for `rbf9`, a 9 × 9 grid on `[0.1, 0.9]²` for
    /// `kl`.
    pub fn sensor_layout(&self) -> Vec<[f64; 2]> {
        match (&self.sensors, self.example) {
            (Some(s), _) => s.clone(),
            (None, Example::Kl) => grid_sensors(0.1, 0.9, 9),
            (None, _) => benchmark_sensors(),
        }
    }
}

/// Noisy observations with the quantities that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub sensors: Vec<[f64; 2]>,
    pub truth: DVector<f64>,
    pub noiseless: DVector<f64>,
    pub data: DVector<f64>,
    pub noise_std: f64,
}

/// A fully specified inverse problem: forward map and Gaussian prior.
#[derive(Clone)]
pub struct InverseProblem {
    pub config: ProblemConfig,
    pub forward: Arc<dyn ForwardMap>,
    /// The PDE model, absent for the linear toy.
    pub pde: Option<Arc<ForwardProblem>>,
    pub sensors: Vec<[f64; 2]>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl std::fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InverseProblem")
            .field("example", &self.config.example)
            .field("params", &self.prior_mean.len())
            .field("obs", &self.sensors.len())
            .finish()
    }
}

/// Operator of the linear toy: i.i.d. standard normal entries scaled by
/// `1/√n`, drawn from its own stream.
pub fn linear_operator(seed: u64, params: usize, obs: usize) -> DMatrix<f64> {
    let mut r = rng::stream(seed, "linear-operator", 0);
    let scale = 1.0 / (params as f64).sqrt();
    DMatrix::from_vec(obs, params, rng::standard_normal_vec(&mut r, obs * params)) * scale
}

impl InverseProblem {
    pub fn build(config: &ProblemConfig) -> Result<Self> {
        config.validate()?;
        let sensors = config.sensor_layout();
        if config.example == Example::Linear {
            let n = config.linear_params;
            let m = config.linear_obs;
            let sensors = (0..m).map(|j| [j as f64, 0.0]).collect();
            return Ok(Self {
                config: config.clone(),
                forward: Arc::new(LinearMap {
                    a: linear_operator(config.data_seed, n, m),
                }),
                pde: None,
                sensors,
                prior_mean: DVector::zeros(n),
                prior_cov: DMatrix::identity(n, n),
            });
        }
        let mesh = Mesh::new(config.mesh)?;
        let parameterization = match config.example {
            Example::Rbf9 => Parameterization::Rbf(RbfParameterization::default()),
            Example::Kl => Parameterization::Kl(kl_decompose(
                &mesh,
                config.kl_variance,
                config.kl_length,
                config.kl_modes,
            )?),
            Example::Linear => unreachable!(),
        };
        let n = parameterization.dim();
        let observation = ObservationOperator::new(&mesh, sensors.clone())?;
        let m = observation.len();
        let pde = Arc::new(ForwardProblem {
            source: benchmark_source(&mesh),
            mesh,
            parameterization,
            bc: match config.neumann {
                NeumannData::Flux => BoundaryConditions::benchmark(),
                NeumannData::Derivative => BoundaryConditions::benchmark_normal_derivative(),
            },
            observation,
            noise_cov: DMatrix::identity(m, m),
            prior_mean: DVector::zeros(n),
            prior_cov: DMatrix::identity(n, n),
        });
        Ok(Self {
            config: config.clone(),
            forward: pde.clone(),
            pde: Some(pde),
            sensors,
            prior_mean: DVector::zeros(n),
            prior_cov: DMatrix::identity(n, n),
        })
    }

    pub fn num_params(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn num_obs(&self) -> usize {
        self.sensors.len()
    }

    /// True parameters: `log κ_i` with `κ_i ~ U[0.5, 2]` for `rbf9`,
    /// standard normal otherwise.
    pub fn truth(&self) -> DVector<f64> {
        let mut r = rng::stream(self.config.data_seed, rng::TRUTH, 0);
        let n = self.num_params();
        match self.config.example {
            Example::Rbf9 => DVector::from_fn(n, |_, _| r.random_range(0.5..2.0f64).ln()),
            _ => DVector::from_vec(rng::standard_normal_vec(&mut r, n)),
        }
    }

    /// `d = F(u) + σ ξ` with `ξ` from the data-noise stream.
    pub fn synthesize(&self, truth: &DVector<f64>) -> Result<SyntheticData> {
        let noiseless = self.forward.eval(truth)?;
        let noise_std = match self.config.noise_model() {
            NoiseModel::Absolute(s) => s,
            NoiseModel::Relative(d) => d * noiseless.amax(),
        };
        let mut r = rng::stream(self.config.data_seed, rng::DATA_NOISE, 0);
        let xi = DVector::from_vec(rng::standard_normal_vec(&mut r, noiseless.len()));
        let data = if noise_std == 0.0 {
            noiseless.clone()
        } else {
            &noiseless + xi * noise_std
        };
        Ok(SyntheticData {
            sensors: self.sensors.clone(),
            truth: truth.clone(),
            noiseless,
            data,
            noise_std,
        })
    }

    /// Whitened posterior for data with i.i.d. noise of the given std.
    pub fn whitened(&self, data: &DVector<f64>, noise_std: f64) -> Result<WhitenedProblem> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidInput(format!("noise std {noise_std} must be positive")));
        }
        let m = self.num_obs();
        let noise_cov = DMatrix::identity(m, m) * (noise_std * noise_std);
        let forward: Arc<dyn ForwardMap> = match &self.pde {
            Some(p) => {
                let mut p = (**p).clone();
                p.noise_cov = noise_cov.clone();
                Arc::new(p)
            }
            None => self.forward.clone(),
        };
        WhitenedProblem::new(forward, self.prior_mean.clone(), &self.prior_cov, data.clone(), &noise_cov)
    }

    /// Coordinates in which accuracy is measured: `κ_i = exp(u_i)` for
    /// `rbf9`, the parameters themselves otherwise.
    pub fn error_coordinates(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.config.example {
            Example::Rbf9 => u.map(f64::exp),
            _ => u.clone(),
        }
    }
}

/// Data CSV: `sensor_x,sensor_y,value`. For the linear toy the sensor
/// columns hold the observation index and 0.
pub fn write_data_csv<W: Write>(sensors: &[[f64; 2]], values: &DVector<f64>, out: W) -> Result<()> {
    if sensors.len() != values.len() {
        return Err(Error::dim("data values", sensors.len(), values.len()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sensor_x", "sensor_y", "value"])?;
    for (s, v) in sensors.iter().zip(values.iter()) {
        w.write_record([format!("{}", s[0]), format!("{}", s[1]), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_data_csv<R: Read>(input: R, origin: &str) -> Result<(Vec<[f64; 2]>, DVector<f64>)> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["sensor_x", "sensor_y", "value"] {
        return Err(bad("expected header sensor_x,sensor_y,value".into()));
    }
    let mut sensors = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        if vals.len() != 3 {
            return Err(bad(format!("row {} has {} fields", line + 1, vals.len())));
        }
        sensors.push([vals[0], vals[1]]);
        values.push(vals[2]);
    }
    if values.is_empty() {
        return Err(bad("no observations".into()));
    }
    Ok((sensors, DVector::from_vec(values)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layouts() {
        let c = ProblemConfig::default();
        assert_eq!(c.sensor_layout().len(), 71);
        let k = ProblemConfig {
            example: Example::Kl,
            ..Default::default()
        };
        assert_eq!(k.sensor_layout().len(), 81);
        assert_eq!(k.noise_model(), NoiseModel::Absolute(0.05));
        assert_eq!(c.noise_model(), NoiseModel::Relative(0.05));
    }

    #[test]
    fn rbf_truth_lies_in_range() {
        let p = InverseProblem::build(&ProblemConfig {
            mesh: 4,
            ..Default::default()
        })
        .unwrap();
        let t = p.truth();
        assert_eq!(t.len(), 9);
        assert!(t.iter().all(|v| v.exp() >= 0.5 && v.exp() < 2.0));
        assert_eq!(t, p.truth());
    }

    #[test]
    fn zero_noise_level_reproduces_forward_output() {
        let p = InverseProblem::build(&ProblemConfig {
            mesh: 6,
            delta: Some(0.0),
            ..Default::default()
        })
        .unwrap();
        let d = p.synthesize(&p.truth()).unwrap();
        assert_eq!(d.data, d.noiseless);
        assert_eq!(d.noise_std, 0.0);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let c = ProblemConfig {
            mesh: 1,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ProblemConfig {
            sensors: Some(vec![[1.5, 0.5]]),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn data_csv_round_trip() {
        let s = vec![[0.1, 0.2], [0.3, 0.4]];
        let v = DVector::from_vec(vec![1.5, -2.25]);
        let mut buf = Vec::new();
        write_data_csv(&s, &v, &mut buf).unwrap();
        let (s2, v2) = read_data_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!((s2, v2), (s, v));
    }
}
