use nalgebra::{DMatrix, DVector};
use rand::Rng;

use dnnrto::bayes::AffineMisfit;
use dnnrto::diagnostics::*;
use dnnrto::rng;
use dnnrto::rto::{run_rto, RtoOptions};

fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "test", 0);
    let z = rng::standard_normal_vec(&mut r, n);
    let s = (1.0 - rho * rho).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut prev = z[0];
    x.push(prev);
    for zi in &z[1..] {
        prev = rho * prev + s * zi;
        x.push(prev);
    }
    x
}

#[test]
fn iid_chain_has_full_ess() {
    let n = 50_000;
    let e = ess(&ar1(0.0, n, 1)).unwrap();
    assert!((0.8 * n as f64..=1.2 * n as f64).contains(&e), "ess {e}");
}

#[test]
fn ar1_chain_matches_theory() {
    let (n, rho) = (50_000, 0.8);
    let x = ar1(rho, n, 2);
    let e = ess(&x).unwrap();
    let theory = n as f64 * (1.0 - rho) / (1.0 + rho);
    assert!((e - theory).abs() <= 0.15 * theory, "ess {e} vs {theory}");
    let acf = autocorrelation(&x, 3).unwrap();
    for (k, a) in acf.iter().enumerate() {
        assert!((a - rho.powi(k as i32 + 1)).abs() <= 0.03);
    }
}

#[test]
fn ess_is_affine_invariant() {
    let x = ar1(0.5, 5000, 3);
    let y: Vec<f64> = x.iter().map(|v| -3.0 * v + 7.0).collect();
    assert!((ess(&x).unwrap() - ess(&y).unwrap()).abs() <= 1e-8 * ess(&x).unwrap());
}

#[test]
fn shifted_mean_gives_known_rem() {
    let mut r = rng::stream(4, "test", 0);
    let reference: Vec<DVector<f64>> = (0..500)
        .map(|_| DVector::from_vec(vec![r.random::<f64>() + 2.0, r.random::<f64>() - 1.0]))
        .collect();
    let (mr, _) = mean_and_covariance(&reference).unwrap();
    let shift = 0.1 * mr.amax();
    let shifted: Vec<DVector<f64>> = reference.iter().map(|v| v + DVector::from_vec(vec![0.0, shift])).collect();
    let e = error_metrics(&shifted, &reference).unwrap();
    assert!((e.rem - 0.1).abs() <= 1e-12);
    assert!(e.rec <= 1e-12);
}

#[test]
fn streaming_summary_matches_two_pass() {
    let mut r = rng::stream(5, "test", 0);
    let samples: Vec<DVector<f64>> = (0..300)
        .map(|_| DVector::from_vec(rng::standard_normal_vec(&mut r, 3)) * 1e3 + DVector::from_element(3, 1e6))
        .collect();
    let s = summarize(&samples, |v| Ok(v.iter().map(|x| x * x).collect())).unwrap();
    for i in 0..3 {
        let vals: Vec<f64> = samples.iter().map(|v| v[i] * v[i]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((s.mean[i] - mean).abs() <= 1e-12 * mean.abs());
        assert!((s.std[i] - var.sqrt()).abs() <= 1e-8 * var.sqrt());
    }
}

#[test]
fn fully_accepted_linear_chain_mixes_well() {
    let mut r = rng::stream(6, "test", 0);
    let a = DMatrix::from_vec(8, 4, rng::standard_normal_vec(&mut r, 32));
    let f = AffineMisfit::new(a, DVector::from_vec(rng::standard_normal_vec(&mut r, 8))).unwrap();
    let (_, chain) = run_rto(&f, 4000, 1, &RtoOptions::default()).unwrap();
    assert_eq!(chain.acceptance_probability, 1.0);
    let report = ess_report(chain.samples(), 1.0).unwrap();
    assert!(report.min >= 0.5 * 4000.0, "min ESS {}", report.min);
    assert!(report.min <= report.median && report.median <= report.max);
}
