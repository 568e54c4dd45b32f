//! Chain diagnostics: autocorrelation, effective sample size, error
//! metrics against a reference chain, and posterior field summaries.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bayes::WhitenedProblem;
use crate::forward_model::ForwardProblem;
use crate::{Error, Result};

const MIN_LENGTH: usize = 10;

/// Centred column and its biased variance, or an error when the column is
/// too short or constant.
fn centred(column: &[f64]) -> Result<(Vec<f64>, f64)> {
    if column.len() < MIN_LENGTH {
        return Err(Error::InvalidInput(format!(
            "chain of length {} is too short for autocorrelation",
            column.len()
        )));
    }
    if column.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("chain column".into()));
    }
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let c: Vec<f64> = column.iter().map(|x| x - mean).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / n;
    if var == 0.0 || column.iter().all(|&x| x == column[0]) {
        return Err(Error::InvalidInput("constant chain column".into()));
    }
    Ok((c, var))
}

fn lag(c: &[f64], var: f64, k: usize) -> f64 {
    let n = c.len();
    let s: f64 = c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
    s / (n as f64 * var)
}

/// Biased sample autocorrelations `ρ(1), …, ρ(K)`.
pub fn autocorrelation(column: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let (c, var) = centred(column)?;
    if max_lag >= c.len() {
        return Err(Error::InvalidInput(format!(
            "lag {max_lag} exceeds chain length {}",
            c.len()
        )));
    }
    Ok((1..=max_lag).map(|k| lag(&c, var, k)).collect())
}

/// `n / (1 + 2 Σ ρ(k))`, summing autocorrelation pairs up to the first
/// non-positive pair and forcing the pair sums to be non-increasing. The
/// result lies in `(0, n]`.
pub fn ess(column: &[f64]) -> Result<f64> {
    let (c, var) = centred(column)?;
    let n = c.len();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while 2 * t + 1 < n {
        let r0 = if t == 0 { 1.0 } else { lag(&c, var, 2 * t) };
        let pair = r0 + lag(&c, var, 2 * t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        t += 1;
    }
    let tau = 2.0 * sum - 1.0;
    let n = n as f64;
    Ok(if tau <= 1.0 { n } else { n / tau })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssReport {
    pub per_parameter: Vec<f64>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub seconds: f64,
    pub min_per_second: f64,
}

/// ESS of every column of `samples` (one sample per entry), timed against
/// `seconds` of sampling wall clock.
pub fn ess_report(samples: &[DVector<f64>], seconds: f64) -> Result<EssReport> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidInput("no samples".into()));
    };
    let per_parameter = (0..first.len())
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            ess(&col)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = per_parameter.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(EssReport {
        min: sorted[0],
        median,
        max: sorted[k - 1],
        seconds,
        min_per_second: sorted[0] / seconds,
        per_parameter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    /// `|mean − mean_ref|_∞ / |mean_ref|_∞`.
    pub rem: f64,
    /// `|cov − cov_ref|_F / |cov_ref|_F`.
    pub rec: f64,
}

/// Sample mean and unbiased covariance.
pub fn mean_and_covariance(samples: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidInput("no samples".into()));
    };
    let n = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::dim("sample", n, bad.len()));
    }
    let count = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(n), |acc, s| acc + s) / count;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    if samples.len() > 1 {
        cov /= count - 1.0;
    }
    Ok((mean, cov))
}

/// REM and REC of `samples` against `reference`, both in the same
/// coordinates.
pub fn error_metrics(samples: &[DVector<f64>], reference: &[DVector<f64>]) -> Result<ErrorReport> {
    let (m, c) = mean_and_covariance(samples)?;
    let (mr, cr) = mean_and_covariance(reference)?;
    if m.len() != mr.len() {
        return Err(Error::dim("sample dimension", mr.len(), m.len()));
    }
    let mnorm = mr.amax();
    let cnorm = cr.norm();
    if mnorm == 0.0 || cnorm == 0.0 {
        return Err(Error::InvalidInput("reference mean or covariance has zero norm".into()));
    }
    Ok(ErrorReport {
        rem: (m - mr).amax() / mnorm,
        rec: (c - cr).norm() / cnorm,
    })
}

/// Node-wise posterior mean and standard deviation (divisor `N`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Streams `map(sample)` through Welford's update.
pub fn summarize<F>(samples: &[DVector<f64>], map: F) -> Result<FieldSummary>
where
    F: Fn(&DVector<f64>) -> Result<Vec<f64>> + Sync,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let fields = samples.par_iter().map(&map).collect::<Result<Vec<_>>>()?;
    let len = fields[0].len();
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    for (k, f) in fields.iter().enumerate() {
        if f.len() != len {
            return Err(Error::dim("field", len, f.len()));
        }
        let w = 1.0 / (k as f64 + 1.0);
        for i in 0..len {
            let delta = f[i] - mean[i];
            mean[i] += delta * w;
            m2[i] += delta * (f[i] - mean[i]);
        }
    }
    let n = fields.len() as f64;
    let std = m2.iter().map(|s| (s / n).max(0.0).sqrt()).collect();
    Ok(FieldSummary { mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Pressure,
    Permeability,
}

/// Posterior mean and std of pressure or permeability at the mesh nodes,
/// from whitened samples.
pub fn field_summaries(
    samples: &[DVector<f64>],
    whitened: &WhitenedProblem,
    problem: &ForwardProblem,
    quantity: Quantity,
) -> Result<FieldSummary> {
    summarize(samples, |v| {
        let u = whitened.unwhiten(v)?;
        match quantity {
            Quantity::Pressure => problem.pressure(u.as_slice()),
            Quantity::Permeability => problem.parameterization.nodal_kappa(u.as_slice(), &problem.mesh),
        }
    })
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticsRow {
    pub method: String,
    #[serde(rename = "N_train")]
    pub n_train: usize,
    #[serde(rename = "AP")]
    pub ap: f64,
    pub seconds_offline: f64,
    pub seconds_online: f64,
    #[serde(rename = "minESS")]
    pub min_ess: f64,
    #[serde(rename = "medESS")]
    pub med_ess: f64,
    #[serde(rename = "maxESS")]
    pub max_ess: f64,
    #[serde(rename = "minESS_per_s")]
    pub min_ess_per_s: f64,
    #[serde(rename = "REM")]
    pub rem: f64,
    #[serde(rename = "REC")]
    pub rec: f64,
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics_csv<R: Read>(input: R) -> Result<Vec<DiagnosticsRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Samples CSV: header `v0..v{n-1}`, one sample per row.
pub fn write_samples_csv<W: Write>(samples: &[DVector<f64>], prefix: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = samples.first().map_or(0, |s| s.len());
    w.write_record((0..n).map(|i| format!("{prefix}{i}")))?;
    for s in samples {
        w.write_record(s.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R, origin: &str) -> Result<Vec<DVector<f64>>> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    let mut r = csv::Reader::from_reader(input);
    let n = r.headers()?.len();
    if n == 0 {
        return Err(bad("empty header".into()));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(bad(format!("row {} has {} fields, expected {n}", line + 1, rec.len())));
        }
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        out.push(DVector::from_vec(vals));
    }
    if out.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_sequence() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocorrelation(&x, 2).unwrap();
        assert!((r[0] + 0.99).abs() < 1e-12);
        assert!((r[1] - 0.98).abs() < 1e-12);
    }

    #[test]
    fn constant_and_short_columns_are_rejected() {
        assert!(ess(&[2.0; 50]).is_err());
        assert!(ess(&[1.0, 2.0, 3.0]).is_err());
        assert!(autocorrelation(&(0..20).map(f64::from).collect::<Vec<_>>(), 20).is_err());
    }

    #[test]
    fn anti_correlated_chain_is_capped_at_length() {
        let x: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(ess(&x).unwrap(), 200.0);
    }

    #[test]
    fn identical_sets_have_zero_error() {
        let s: Vec<DVector<f64>> = (0..20)
            .map(|i| DVector::from_vec(vec![1.0 + (i as f64).sin(), 2.0 * (i as f64).cos()]))
            .collect();
        let e = error_metrics(&s, &s).unwrap();
        assert_eq!((e.rem, e.rec), (0.0, 0.0));
    }

    #[test]
    fn zero_reference_is_rejected() {
        let z = vec![DVector::zeros(2); 5];
        assert!(error_metrics(&z, &z).is_err());
    }

    #[test]
    fn single_sample_has_zero_spread() {
        let s = summarize(&[DVector::from_vec(vec![3.0])], |v| Ok(vec![v[0], 2.0 * v[0]])).unwrap();
        assert_eq!(s.mean, vec![3.0, 6.0]);
        assert_eq!(s.std, vec![0.0, 0.0]);
    }

    #[test]
    fn diagnostics_header_matches_schema() {
        let row = DiagnosticsRow {
            method: "rto".into(),
            n_train: 0,
            ap: 1.0,
            seconds_offline: 0.0,
            seconds_online: 1.0,
            min_ess: 1.0,
            med_ess: 1.0,
            max_ess: 1.0,
            min_ess_per_s: 1.0,
            rem: f64::NAN,
            rec: f64::NAN,
        };
        let mut buf = Vec::new();
        write_diagnostics_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "method,N_train,AP,seconds_offline,seconds_online,minESS,medESS,maxESS,minESS_per_s,REM,REC\n"
        ));
        let back = read_diagnostics_csv(text.as_bytes()).unwrap();
        assert!(back[0].rem.is_nan());
    }
}
