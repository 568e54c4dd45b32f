use std::path::{Path, PathBuf};

use crate::diagnostics::Quantity;
use crate::nls::NlsOptions;
use crate::problems::{Example, ProblemConfig};
use crate::rto::{RtoOptions, DEFAULT_ROOT_TOL};
use crate::surrogate::TrainOptions;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Method {
    #[serde(rename = "rto")]
    Rto,
    #[serde(rename = "dnn-rto")]
    DnnRto,
    #[serde(rename = "dnn-rto-pr")]
    DnnRtoPrior,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rto => "rto",
            Method::DnnRto => "dnn-rto",
            Method::DnnRtoPrior => "dnn-rto-pr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub method: Method,
    pub n_samps: usize,
    /// Master seed for design, initialisation, proposals and MH uniforms.
    pub seed: u64,
    pub rank_threshold: f64,
    pub root_tol: f64,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
    /// Worker threads for proposals and snapshots; 0 uses every core.
    pub threads: usize,
    /// Whitened reference samples for REM/REC.
    pub reference: Option<PathBuf>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let nls = NlsOptions::default();
        Self {
            method: Method::Rto,
            n_samps: 5000,
            seed: 0,
            rank_threshold: 1e-10,
            root_tol: DEFAULT_ROOT_TOL,
            gradient_tol: nls.gradient_tol,
            step_tol: nls.step_tol,
            max_iterations: nls.max_iterations,
            threads: 0,
            reference: None,
        }
    }
}

impl SamplerConfig {
    pub fn rto_options(&self) -> RtoOptions {
        RtoOptions {
            nls: NlsOptions {
                gradient_tol: self.gradient_tol,
                step_tol: self.step_tol,
                max_iterations: self.max_iterations,
            },
            rank_threshold: self.rank_threshold,
            root_tol: self.root_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Hidden layers; 3 for `rbf9`, 4 for `kl`, 2 for `linear`.
    pub layers: Option<usize>,
    /// Neurons per hidden layer; 40 for `rbf9`, 80 for `kl`, 20 for `linear`.
    pub width: Option<usize>,
    pub n_train: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_tol: f64,
    /// Existing training set to reuse instead of fresh snapshots.
    pub training_set: Option<PathBuf>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            layers: None,
            width: None,
            n_train: 100,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            loss_tol: t.loss_tol,
            training_set: None,
        }
    }
}

impl SurrogateConfig {
    pub fn hidden(&self, example: Example) -> (usize, usize) {
        let (l, d) = match example {
            Example::Rbf9 => (3, 40),
            Example::Kl => (4, 80),
            Example::Linear => (2, 20),
        };
        (self.layers.unwrap_or(l), self.width.unwrap_or(d))
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            loss_tol: self.loss_tol,
            seed,
            ..TrainOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub emit_samples: bool,
    /// Field written to `fields.csv`.
    pub field: Quantity,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            emit_samples: true,
            field: Quantity::Permeability,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub sampler: SamplerConfig,
    pub surrogate: SurrogateConfig,
    pub output: OutputConfig,
}

/// `[problem]`: the benchmark settings plus an optional data file.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ProblemSection {
    /// Observations to invert instead of freshly synthesised data.
    pub data_file: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: ProblemConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.output.directory);
        cfg.problem.data_file.as_mut().map(fix);
        cfg.sampler.reference.as_mut().map(fix);
        cfg.surrogate.training_set.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.problem
            .settings
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.sampler;
        if s.n_samps == 0 {
            return bad("sampler.n_samps must be positive");
        }
        if !(s.rank_threshold >= 0.0 && s.rank_threshold < 1.0) {
            return bad("sampler.rank_threshold must lie in [0, 1)");
        }
        if !(s.root_tol > 0.0) || !(s.gradient_tol > 0.0) || !(s.step_tol > 0.0) {
            return bad("sampler tolerances must be positive");
        }
        if s.max_iterations == 0 {
            return bad("sampler.max_iterations must be positive");
        }
        let g = &self.surrogate;
        if self.sampler.method != Method::Rto {
            let (l, d) = g.hidden(self.problem.settings.example);
            if l == 0 || d == 0 {
                return bad("surrogate.layers and surrogate.width must be positive");
            }
            if g.n_train == 0 && g.training_set.is_none() {
                return bad("surrogate.n_train must be positive");
            }
        }
        g.train_options(0)
            .validate()
            .map_err(|e| CliError::Config(format!("surrogate: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_benchmark_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.problem.settings.mesh, 40);
        assert_eq!(c.sampler.n_samps, 5000);
        assert_eq!(c.surrogate.hidden(Example::Rbf9), (3, 40));
        assert_eq!(c.surrogate.hidden(Example::Kl), (4, 80));
        assert_eq!(c.surrogate.learning_rate, 5e-4);
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            "[problem]\nexample = \"kl\"\nkl_modes = 20\nmesh = 10\n\
             [sampler]\nmethod = \"dnn-rto-pr\"\nn_samps = 10\n\
             [surrogate]\nlayers = 2\n[output]\nfield = \"pressure\"\n",
        )
        .unwrap();
        assert_eq!(c.problem.settings.example, Example::Kl);
        assert_eq!(c.sampler.method, Method::DnnRtoPrior);
        assert_eq!(c.surrogate.hidden(Example::Kl), (2, 80));
        assert_eq!(c.output.field, Quantity::Pressure);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "[sampler]\nn_samps = 0\n",
            "[sampler]\nmethod = \"mcmc\"\n",
            "[surrogate]\nlearning_rate = -1.0\n",
            "[problem]\nmesh = 0\n",
            "[output]\nunknown = 1\n",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn echoed_config_parses_back_identically() {
        let c = RunConfig::from_toml("[sampler]\nseed = 7\n[problem]\ndelta = 0.01\n").unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
