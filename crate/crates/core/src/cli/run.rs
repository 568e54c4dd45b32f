use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use super::config::{Method, RunConfig};
use super::{CliError, Phase};
use crate::bayes::{MisfitMap, WhitenedProblem};
use crate::design::{build_training_set, read_training_csv, sample_local, sample_prior, write_training_csv, LocalGaussian};
use crate::diagnostics::{
    ess_report, error_metrics, field_summaries, read_samples_csv, summarize, write_diagnostics_csv,
    write_samples_csv, DiagnosticsRow, FieldSummary,
};
use crate::problems::{read_data_csv, write_data_csv, InverseProblem, NoiseModel, SyntheticData};
use crate::rto::{build_subspace, find_reference, sample_chain, ChainResult, RtoSubspace};
use crate::surrogate::{save_network, train, MlpArchitecture, MlpSurrogate, TrainingSet};
use crate::Result;

/// Everything a run produces, before anything is written to disk.
#[derive(Debug)]
pub struct RunOutcome {
    pub method: Method,
    pub problem: InverseProblem,
    pub data: SyntheticData,
    pub whitened: WhitenedProblem,
    /// MAP of the true model.
    pub v_ref: DVector<f64>,
    pub subspace: RtoSubspace,
    pub chain: ChainResult,
    pub surrogate: Option<MlpSurrogate>,
    pub training_set: Option<TrainingSet>,
    pub seconds_offline: f64,
    pub seconds_online: f64,
}

impl RunOutcome {
    /// Chain samples in the coordinates used for REM/REC.
    pub fn error_samples(&self) -> Result<Vec<DVector<f64>>> {
        to_error_coordinates(&self.problem, &self.whitened, self.chain.samples())
    }

    /// Diagnostics row; REM/REC are NaN without a reference.
    pub fn diagnostics(&self, reference: Option<&[DVector<f64>]>) -> Result<DiagnosticsRow> {
        let ess = ess_report(self.chain.samples(), self.seconds_online);
        let (min, med, max, per_s) = match &ess {
            Ok(r) => (r.min, r.median, r.max, r.min_per_second),
            Err(e) => {
                log::warn!("ESS undefined: {e}");
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            }
        };
        let (rem, rec) = match reference {
            Some(r) => {
                let ref_err = to_error_coordinates(&self.problem, &self.whitened, r)?;
                let e = error_metrics(&self.error_samples()?, &ref_err)?;
                (e.rem, e.rec)
            }
            None => (f64::NAN, f64::NAN),
        };
        Ok(DiagnosticsRow {
            method: self.method.name().to_string(),
            n_train: self.training_set.as_ref().map_or(0, |t| t.len()),
            ap: self.chain.acceptance_probability,
            seconds_offline: self.seconds_offline,
            seconds_online: self.seconds_online,
            min_ess: min,
            med_ess: med,
            max_ess: max,
            min_ess_per_s: per_s,
            rem,
            rec,
        })
    }
}

fn to_error_coordinates(
    problem: &InverseProblem,
    whitened: &WhitenedProblem,
    samples: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    samples
        .iter()
        .map(|v| Ok(problem.error_coordinates(&whitened.unwhiten(v)?)))
        .collect()
}

/// Builds the problem and obtains data, from `problem.data_file` when set.
pub fn prepare(cfg: &RunConfig) -> std::result::Result<(InverseProblem, SyntheticData), CliError> {
    let mut settings = cfg.problem.settings.clone();
    let loaded = match &cfg.problem.data_file {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::runtime(Phase::Data, e.into()))?;
            let (sensors, values) =
                read_data_csv(file, &path.display().to_string()).map_err(|e| CliError::runtime(Phase::Data, e))?;
            if settings.example != crate::problems::Example::Linear {
                settings.sensors = Some(sensors);
            }
            Some(values)
        }
        None => None,
    };
    let problem = InverseProblem::build(&settings).map_err(|e| match e {
        crate::Error::Config(m) => CliError::Config(m),
        e => CliError::runtime(Phase::Data, e),
    })?;
    if problem.num_obs() != loaded.as_ref().map_or(problem.num_obs(), |d| d.len()) {
        return Err(CliError::Config("data file does not match the observation count".into()));
    }
    let data = match loaded {
        Some(values) => {
            let noise_std = match settings.noise_model() {
                NoiseModel::Absolute(s) => s,
                NoiseModel::Relative(d) => d * values.amax(),
            };
            SyntheticData {
                sensors: problem.sensors.clone(),
                truth: DVector::from_element(problem.num_params(), f64::NAN),
                noiseless: DVector::from_element(values.len(), f64::NAN),
                data: values,
                noise_std,
            }
        }
        None => problem
            .synthesize(&problem.truth())
            .map_err(|e| CliError::runtime(Phase::Data, e))?,
    };
    Ok((problem, data))
}

/// Offline and online stages for the configured method, without file
/// output.
pub fn run_in_memory(cfg: &RunConfig) -> std::result::Result<RunOutcome, CliError> {
    cfg.validate()?;
    let (problem, data) = prepare(cfg)?;
    let whitened = problem
        .whitened(&data.data, data.noise_std)
        .map_err(|e| CliError::runtime(Phase::Data, e))?;
    let opts = cfg.sampler.rto_options();
    let seed = cfg.sampler.seed;
    let offline = |e| CliError::runtime(Phase::Offline, e);
    let online = |e| CliError::runtime(Phase::Online, e);

    let t0 = Instant::now();
    let v_ref = find_reference(&whitened, DVector::zeros(whitened.dim()), &opts.nls).map_err(offline)?;
    let method = cfg.sampler.method;

    if method == Method::Rto {
        let subspace = build_subspace(&whitened, &v_ref, opts.rank_threshold).map_err(online)?;
        let mut chain = sample_chain(&subspace, &whitened, cfg.sampler.n_samps, seed, &opts).map_err(online)?;
        let total = t0.elapsed().as_secs_f64();
        chain.setup_seconds = total - chain.online_seconds();
        return Ok(RunOutcome {
            method,
            problem,
            data,
            whitened,
            v_ref,
            subspace,
            chain,
            surrogate: None,
            training_set: None,
            seconds_offline: 0.0,
            seconds_online: total,
        });
    }

    let set = match &cfg.surrogate.training_set {
        Some(path) => {
            let f = File::open(path).map_err(|e| offline(e.into()))?;
            read_training_csv(f, &path.display().to_string()).map_err(offline)?
        }
        None => {
            let n = cfg.surrogate.n_train;
            let inputs = if method == Method::DnnRto {
                let design = LocalGaussian::new(&whitened, &v_ref, opts.rank_threshold).map_err(offline)?;
                sample_local(&design, n, seed)
            } else {
                sample_prior(n, whitened.dim(), seed)
            };
            build_training_set(&whitened, &inputs).map_err(offline)?
        }
    };
    let (layers, width) = cfg.surrogate.hidden(problem.config.example);
    let arch = MlpArchitecture::new(whitened.dim(), whitened.num_obs(), layers, width).map_err(offline)?;
    let net = train(&arch, &set, &cfg.surrogate.train_options(seed)).map_err(offline)?;
    let seconds_offline = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let v_nn = find_reference(&net, v_ref.clone(), &opts.nls).map_err(online)?;
    let subspace = build_subspace(&net, &v_nn, opts.rank_threshold).map_err(online)?;
    let mut chain = sample_chain(&subspace, &net, cfg.sampler.n_samps, seed, &opts).map_err(online)?;
    let seconds_online = t1.elapsed().as_secs_f64();
    chain.setup_seconds = seconds_online - chain.online_seconds();
    Ok(RunOutcome {
        method,
        problem,
        data,
        whitened,
        v_ref,
        subspace,
        chain,
        surrogate: Some(net),
        training_set: Some(set),
        seconds_offline,
        seconds_online,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_fields(out: &RunOutcome, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "fields.csv")?);
    w.write_record(["x", "y", "mean", "std"])?;
    let (coords, summary): (Vec<[f64; 2]>, FieldSummary) = match &out.problem.pde {
        Some(pde) => (
            pde.mesh.node_coordinates(),
            field_summaries(out.chain.samples(), &out.whitened, pde, cfg.output.field)?,
        ),
        None => (
            (0..out.problem.num_params()).map(|i| [i as f64, 0.0]).collect(),
            summarize(out.chain.samples(), |v| Ok(out.whitened.unwhiten(v)?.as_slice().to_vec()))?,
        ),
    };
    for (x, (m, s)) in coords.iter().zip(summary.mean.iter().zip(&summary.std)) {
        w.write_record([x[0].to_string(), x[1].to_string(), format!("{m:e}"), format!("{s:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(cfg: &RunConfig, dir: &Path, extra: &[(&str, String)]) -> Result<()> {
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut w = create(dir, "manifest.txt")?;
    let mut kv = vec![
        ("program", env!("CARGO_PKG_NAME").to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("config_sha256", config_hash(cfg)),
        ("config_file", "config.toml".to_string()),
        ("master_seed", cfg.sampler.seed.to_string()),
        ("data_seed", cfg.problem.settings.data_seed.to_string()),
        (
            "streams",
            [
                crate::rng::DATA_NOISE,
                crate::rng::TRUTH,
                crate::rng::DESIGN,
                crate::rng::INIT,
                crate::rng::PROPOSALS,
                crate::rng::MH_UNIFORMS,
            ]
            .join(","),
        ),
    ];
    kv.extend(extra.iter().cloned());
    for (k, v) in kv {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// `run <config>`: executes the pipeline and writes samples, diagnostics,
/// fields and manifest into the output directory.
pub fn run_experiment(cfg: &RunConfig) -> std::result::Result<RunOutcome, CliError> {
    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(Phase::Output, e.into()))?;
    let reference = match &cfg.sampler.reference {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::runtime(Phase::Data, e.into()))?;
            Some(read_samples_csv(f, &p.display().to_string()).map_err(|e| CliError::runtime(Phase::Data, e))?)
        }
        None => None,
    };
    let out = run_in_memory(cfg)?;
    let write = || -> Result<()> {
        let row = out.diagnostics(reference.as_deref())?;
        write_diagnostics_csv(&[row], create(dir, "diagnostics.csv")?)?;
        if cfg.output.emit_samples {
            write_samples_csv(out.chain.samples(), "v", create(dir, "samples.csv")?)?;
        }
        write_fields(&out, cfg, dir)?;
        if let Some(net) = &out.surrogate {
            save_network(net, &dir.join("network.bin"))?;
        }
        if let Some(set) = &out.training_set {
            if cfg.surrogate.training_set.is_none() {
                write_training_csv(set, create(dir, "training.csv")?)?;
            }
        }
        write_manifest(
            cfg,
            dir,
            &[
                ("method", out.method.name().to_string()),
                ("n_samps", cfg.sampler.n_samps.to_string()),
                ("subspace_rank", out.subspace.rank().to_string()),
                ("noise_std", format!("{:e}", out.data.noise_std)),
                ("unconverged_proposals", out.chain.unconverged.to_string()),
            ],
        )
    };
    write().map_err(|e| CliError::runtime(Phase::Output, e))?;
    Ok(out)
}

/// `generate-data <config>`: writes `data.csv`, `noiseless.csv`,
/// `truth.csv` and a manifest.
pub fn generate_data(cfg: &RunConfig) -> std::result::Result<SyntheticData, CliError> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.problem.data_file = None;
    let (_, data) = prepare(&cfg)?;
    let dir = &cfg.output.directory;
    let write = || -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_data_csv(&data.sensors, &data.data, create(dir, "data.csv")?)?;
        write_data_csv(&data.sensors, &data.noiseless, create(dir, "noiseless.csv")?)?;
        write_samples_csv(std::slice::from_ref(&data.truth), "u", create(dir, "truth.csv")?)?;
        write_manifest(&cfg, dir, &[("noise_std", format!("{:e}", data.noise_std))])
    };
    write().map_err(|e| CliError::runtime(Phase::Output, e))?;
    Ok(data)
}

/// Summary of `diagnose <samples> <reference>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseReport {
    pub ess: crate::diagnostics::EssReport,
    pub errors: crate::diagnostics::ErrorReport,
    pub samples: usize,
}

/// ESS of `samples` and REM/REC against `reference`, in the coordinates
/// the files are written in.
pub fn diagnose(samples: &Path, reference: &Path) -> std::result::Result<DiagnoseReport, CliError> {
    let load = |p: &Path| -> Result<Vec<DVector<f64>>> { read_samples_csv(File::open(p)?, &p.display().to_string()) };
    let phase = |e| CliError::runtime(Phase::Diagnose, e);
    let s = load(samples).map_err(phase)?;
    let r = load(reference).map_err(phase)?;
    Ok(DiagnoseReport {
        ess: ess_report(&s, 1.0).map_err(phase)?,
        errors: error_metrics(&s, &r).map_err(phase)?,
        samples: s.len(),
    })
}
