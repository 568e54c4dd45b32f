//! Training designs for the surrogate: the local Gaussian fitted to the
//! linearised misfit, and the prior baseline.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::bayes::MisfitMap;
use crate::rng;
use crate::rto::RtoSubspace;
use crate::surrogate::TrainingSet;
use crate::{Error, Result};

/// First-order model `f(v) ≈ A v − b` about `v_ref`.
pub fn linearize<M: MisfitMap + ?Sized>(misfit: &M, v_ref: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (f, a) = misfit.misfit_and_jacobian(v_ref)?;
    let b = &a * v_ref - f;
    Ok((a, b))
}

/// Gaussian `N(center, Φ(Λ²+I)⁻¹Φᵀ + (I − ΦΦᵀ))` built from the
/// linearisation at `center`.
#[derive(Debug, Clone)]
pub struct LocalGaussian {
    pub center: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LocalGaussian {
    pub fn new<M: MisfitMap + ?Sized>(misfit: &M, v_ref: &DVector<f64>, rank_threshold: f64) -> Result<Self> {
        let (a, b) = linearize(misfit, v_ref)?;
        let sub = RtoSubspace::from_jacobian(v_ref.clone(), a.clone(), rank_threshold)?;
        Ok(Self::from_parts(sub, a, b))
    }

    pub fn from_parts(subspace: RtoSubspace, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self {
            center: subspace.v_ref,
            phi: subspace.phi,
            lambda: subspace.lambda,
            a,
            b,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        subspace_covariance(&self.phi, &self.lambda)
    }

    /// `Γ Aᵀ b`, the mean of the linearised posterior.
    pub fn linear_mean(&self) -> DVector<f64> {
        self.covariance() * self.a.tr_mul(&self.b)
    }

    /// One draw `center + Φ(Λ²+I)^{-1/2} z_r + (I − ΦΦᵀ) z_n`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let zr = DVector::from_vec(rng::standard_normal_vec(rng, self.rank()));
        let zn = DVector::from_vec(rng::standard_normal_vec(rng, n));
        let scaled = zr.zip_map(&self.lambda, |z, l| z / (l * l + 1.0).sqrt());
        let perp = &zn - &self.phi * self.phi.tr_mul(&zn);
        &self.center + &self.phi * scaled + perp
    }
}

fn subspace_covariance(phi: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let n = phi.nrows();
    let d = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / (l * l + 1.0) - 1.0));
    DMatrix::identity(n, n) + phi * d * phi.transpose()
}

/// `max |(AᵀA + I)⁻¹ − [Φ(Λ²+I)⁻¹Φᵀ + (I − ΦΦᵀ)]|` with a dense inverse on
/// the left and the thin SVD of `A` on the right.
pub fn covariance_identity_check(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.ncols();
    let dense = (a.tr_mul(a) + DMatrix::identity(n, n))
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("AᵀA + I".into()))?;
    let sub = RtoSubspace::from_jacobian(DVector::zeros(n), a.clone(), 0.0)?;
    let implied = subspace_covariance(&sub.phi, &sub.lambda);
    Ok((dense - implied).amax())
}

/// `count` draws from the local Gaussian; draw `i` uses design stream `i`.
pub fn sample_local(design: &LocalGaussian, count: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|i| design.draw(&mut rng::stream(seed, rng::DESIGN, i as u64)))
        .collect()
}

/// `count` standard-normal draws in `dim` dimensions.
pub fn sample_prior(count: usize, dim: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, rng::DESIGN, i as u64);
            DVector::from_vec(rng::standard_normal_vec(&mut r, dim))
        })
        .collect()
}

/// Evaluates the misfit at each input in parallel. Points where the model
/// fails are dropped with a warning; `evaluations` counts every solve
/// attempted.
pub fn build_training_set<M: MisfitMap + ?Sized>(misfit: &M, inputs: &[DVector<f64>]) -> Result<TrainingSet> {
    let calls = AtomicUsize::new(0);
    let results: Vec<Option<(DVector<f64>, DVector<f64>)>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            calls.fetch_add(1, Ordering::Relaxed);
            match misfit.misfit(v) {
                Ok(y) if y.iter().all(|x| x.is_finite()) => Some((v.clone(), y)),
                Ok(_) => {
                    log::warn!("training point {i} dropped: non-finite misfit");
                    None
                }
                Err(e) => {
                    log::warn!("training point {i} dropped: {e}");
                    None
                }
            }
        })
        .collect();
    let pairs: Vec<_> = results.into_iter().flatten().collect();
    if pairs.len() < inputs.len() {
        log::warn!("{} of {} training points kept", pairs.len(), inputs.len());
    }
    let mut set = TrainingSet::from_pairs(&pairs)?;
    set.evaluations = calls.into_inner();
    Ok(set)
}

/// CSV with header `v0..v{n-1},f0..f{m-1}`, one pair per row.
pub fn write_training_csv<W: Write>(set: &TrainingSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..set.input_dim())
        .map(|i| format!("v{i}"))
        .chain((0..set.output_dim()).map(|i| format!("f{i}")))
        .collect();
    w.write_record(&header)?;
    for j in 0..set.len() {
        let row: Vec<String> = set
            .inputs
            .column(j)
            .iter()
            .chain(set.targets.column(j).iter())
            .map(|x| format!("{x:e}"))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_csv<R: Read>(input: R, origin: &str) -> Result<TrainingSet> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with('v')).count();
    let m = header.iter().filter(|h| h.starts_with('f')).count();
    if n + m != header.len() || n == 0 || m == 0 {
        return Err(bad("header must be v0..,f0.. columns".into()));
    }
    let mut pairs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        if vals.len() != n + m {
            return Err(bad(format!("row {} has {} fields", line + 1, vals.len())));
        }
        pairs.push((
            DVector::from_column_slice(&vals[..n]),
            DVector::from_column_slice(&vals[n..]),
        ));
    }
    TrainingSet::from_pairs(&pairs).map_err(|e| bad(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::AffineMisfit;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, "test", 0);
        DMatrix::from_vec(rows, cols, rng::standard_normal_vec(&mut r, rows * cols))
    }

    #[test]
    fn zero_matrix_gives_identity_on_both_sides() {
        assert_eq!(covariance_identity_check(&DMatrix::zeros(4, 3)).unwrap(), 0.0);
    }

    #[test]
    fn identity_holds_for_random_matrix() {
        assert!(covariance_identity_check(&random_matrix(10, 6, 1)).unwrap() <= 1e-10);
        assert!(covariance_identity_check(&random_matrix(3, 7, 2)).unwrap() <= 1e-10);
    }

    #[test]
    fn affine_linearisation_is_exact() {
        let a = random_matrix(5, 3, 3);
        let b = DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0, 0.0]);
        let misfit = AffineMisfit::new(a.clone(), b.clone()).unwrap();
        let v_ref = DVector::from_vec(vec![0.3, -0.2, 1.0]);
        let (la, lb) = linearize(&misfit, &v_ref).unwrap();
        assert!((la - &a).amax() < 1e-14);
        assert!((lb - &b).amax() < 1e-12);
    }

    #[test]
    fn empty_subspace_draws_are_shifted_normals() {
        let misfit = AffineMisfit::zero(3, 2);
        let center = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let g = LocalGaussian::new(&misfit, &center, 1e-10).unwrap();
        assert_eq!(g.rank(), 0);
        let draws = sample_local(&g, 2, 5);
        let mut r = rng::stream(5, rng::DESIGN, 0);
        let _ = rng::standard_normal_vec(&mut r, 0);
        let z = DVector::from_vec(rng::standard_normal_vec(&mut r, 3));
        assert!((&draws[0] - (&center + z)).amax() < 1e-15);
    }

    #[test]
    fn training_set_counts_and_passes_through() {
        let misfit = AffineMisfit::new(random_matrix(4, 2, 7), DVector::zeros(4)).unwrap();
        let inputs = sample_prior(6, 2, 1);
        let mut dup = inputs.clone();
        dup.push(inputs[0].clone());
        let set = build_training_set(&misfit, &dup).unwrap();
        assert_eq!(set.evaluations, 7);
        assert_eq!(set.targets.column(0), set.targets.column(6));
        for (j, v) in dup.iter().enumerate() {
            assert!((misfit.misfit(v).unwrap() - set.targets.column(j)).amax() <= 1e-14);
        }
    }

    #[test]
    fn csv_header_is_checked() {
        assert!(read_training_csv("a,b\n1,2\n".as_bytes(), "x").is_err());
        let set = read_training_csv("v0,f0,f1\n1,2,3\n".as_bytes(), "x").unwrap();
        assert_eq!(set.targets[(1, 0)], 3.0);
    }
}
