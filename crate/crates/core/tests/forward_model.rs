use std::f64::consts::PI;
use std::fs::File;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dnnrto::bayes::MisfitMap;
use dnnrto::cli::RunConfig;
use dnnrto::diagnostics::read_samples_csv;
use dnnrto::forward_model::*;
use dnnrto::problems::{read_data_csv, Example, InverseProblem, NeumannData, ProblemConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn pde(example: Example, mesh: usize, modes: usize) -> ForwardProblem {
    let p = InverseProblem::build(&ProblemConfig {
        example,
        mesh,
        kl_modes: modes,
        ..Default::default()
    })
    .unwrap();
    (*p.pde.unwrap()).clone()
}

fn max_error_manufactured(cells: usize) -> f64 {
    let mesh = Mesh::new(cells).unwrap();
    let exact = mesh.interpolate(|x, y| (PI * x).sin() * (PI * y).sin());
    let source: Vec<f64> = exact.iter().map(|p| 2.0 * PI * PI * p).collect();
    let field = PermeabilityField::new(vec![1.0; mesh.num_cells()]).unwrap();
    let p = assemble_and_solve(&mesh, &field, &source, &BoundaryConditions::homogeneous_dirichlet()).unwrap();
    p.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let e: Vec<f64> = [10, 20, 40].iter().map(|&n| max_error_manufactured(n)).collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "errors {e:?}");
    }
}

/// Central differences with step `1e-5 · max(1, |u_i|)`.
fn fd_jacobian(problem: &ForwardProblem, u: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(problem.num_obs(), u.len());
    for i in 0..u.len() {
        let h = 1e-5 * u[i].abs().max(1.0);
        let mut up = u.to_vec();
        up[i] += h;
        let mut dn = u.to_vec();
        dn[i] -= h;
        let fp = problem.forward(&up).unwrap();
        let fm = problem.forward(&dn).unwrap();
        for k in 0..problem.num_obs() {
            jac[(k, i)] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    jac
}

fn assert_jacobian_close(problem: &ForwardProblem, u: &[f64]) {
    let an = problem.jacobian(u).unwrap();
    let fd = fd_jacobian(problem, u);
    let floor = 1e-6 * an.amax();
    for (a, f) in an.iter().zip(fd.iter()) {
        assert!((a - f).abs() <= 1e-4 * (a.abs() + floor), "analytic {a} vs fd {f}");
    }
}

#[test]
fn rbf_jacobian_matches_finite_differences_at_prior_mean() {
    let p = pde(Example::Rbf9, 10, 0);
    assert_jacobian_close(&p, &[0.0; 9]);
}

#[test]
fn jacobian_matches_finite_differences_on_random_draws() {
    let rbf = pde(Example::Rbf9, 8, 0);
    let kl = pde(Example::Kl, 8, 12);
    let mut r = dnnrto::rng::stream(3, "test", 0);
    for _ in 0..10 {
        assert_jacobian_close(&rbf, &dnnrto::rng::standard_normal_vec(&mut r, 9));
        assert_jacobian_close(&kl, &dnnrto::rng::standard_normal_vec(&mut r, 12));
    }
}

#[test]
fn derivative_boundary_data_has_consistent_jacobian() {
    let p = InverseProblem::build(&ProblemConfig {
        mesh: 8,
        neumann: NeumannData::Derivative,
        ..Default::default()
    })
    .unwrap();
    let pde = p.pde.unwrap();
    let mut r = dnnrto::rng::stream(4, "test", 0);
    for _ in 0..5 {
        assert_jacobian_close(&pde, &dnnrto::rng::standard_normal_vec(&mut r, 9));
    }
    let flux = pde_default_mesh8();
    assert_ne!(flux.forward(&[0.0; 9]).unwrap(), pde.forward(&[0.0; 9]).unwrap());
}

fn pde_default_mesh8() -> ForwardProblem {
    pde(Example::Rbf9, 8, 0)
}

#[test]
fn global_log_scale_obeys_scaling_identity() {
    let mesh = Mesh::new(8).unwrap();
    let sensors = grid_sensors(0.1, 0.9, 4);
    let problem = ForwardProblem {
        source: benchmark_source(&mesh),
        observation: ObservationOperator::new(&mesh, sensors).unwrap(),
        mesh,
        parameterization: Parameterization::LogScale,
        bc: BoundaryConditions::homogeneous_dirichlet(),
        noise_cov: DMatrix::identity(16, 16),
        prior_mean: DVector::zeros(1),
        prior_cov: DMatrix::identity(1, 1),
    };
    for c in [-0.7, 0.0, 1.3] {
        let (f, j) = problem.forward_and_jacobian(&[c]).unwrap();
        let f1 = problem.forward(&[0.0]).unwrap();
        for k in 0..f.len() {
            assert!((f[k] - f1[k] * (-c).exp()).abs() < 1e-12 * f1[k].abs().max(1.0));
            assert!((j[(k, 0)] + f[k]).abs() < 1e-10 * f[k].abs().max(1.0));
        }
    }
}

#[test]
fn far_away_center_has_no_sensitivity() {
    let mut p = pde(Example::Rbf9, 10, 0);
    let mut centers = RbfParameterization::default().centers().to_vec();
    centers[4] = [25.0, 25.0];
    centers.push([0.5, 0.5]);
    p.parameterization = Parameterization::Rbf(RbfParameterization::new(centers, 0.1).unwrap());
    p.prior_mean = DVector::zeros(10);
    p.prior_cov = DMatrix::identity(10, 10);
    let j = p.jacobian(&[0.0; 10]).unwrap();
    assert!(j.column(4).norm() < 1e-10);
    assert!(j.column(9).norm() > 1e-3);
}

#[test]
fn forward_is_deterministic() {
    let p = pde(Example::Rbf9, 10, 0);
    let u = [0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.2, 0.1, -0.1];
    assert_eq!(p.forward(&u).unwrap(), p.forward(&u).unwrap());
}

#[test]
fn relabelled_centers_give_identical_output() {
    let p = pde(Example::Rbf9, 10, 0);
    let base = RbfParameterization::default();
    let reflect = |c: [f64; 2]| [c[0], 1.0 - c[1]];
    let mirrored: Vec<[f64; 2]> = base.centers().iter().map(|&c| reflect(c)).collect();
    let perm: Vec<usize> = mirrored
        .iter()
        .map(|m| base.centers().iter().position(|c| (c[0] - m[0]).abs() + (c[1] - m[1]).abs() < 1e-14).unwrap())
        .collect();
    let mut q = p.clone();
    q.parameterization = Parameterization::Rbf(RbfParameterization::new(mirrored, 0.1).unwrap());

    let equal = [0.2; 9];
    let a = p.forward(&equal).unwrap();
    let b = q.forward(&equal).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10 * x.abs().max(1.0)));

    let u: Vec<f64> = (0..9).map(|i| (i as f64 * 1.3).sin()).collect();
    let permuted: Vec<f64> = (0..9).map(|i| u[perm[i]]).collect();
    let a = p.forward(&u).unwrap();
    let b = q.forward(&permuted).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10 * x.abs().max(1.0)));
}

#[test]
fn rbf_matches_direct_summation() {
    let rbf = RbfParameterization::default();
    let w: Vec<f64> = (0..9).map(|i| 0.5 + 0.1 * i as f64).collect();
    let mut r = dnnrto::rng::stream(5, "test", 0);
    use rand::Rng;
    for _ in 0..100 {
        let x = [r.random::<f64>(), r.random::<f64>()];
        let mut direct = 0.0;
        for (k, c) in rbf.centers().iter().enumerate() {
            let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            direct += w[k] * (-d2 / (2.0 * 0.1 * 0.1)).exp();
        }
        assert!((rbf.kappa_at(&w, x) - direct).abs() <= 1e-12);
    }
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
fn jacobi_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() < 1e-15 * a.norm() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

#[test]
fn kl_matches_jacobi_oracle() {
    let mesh = Mesh::new(10).unwrap();
    let n_modes = 15;
    let kl = kl_decompose(&mesh, 1.0, 0.3, n_modes).unwrap();
    let (vals, vecs) = jacobi_eigen(weighted_kernel_matrix(&mesh, 1.0, 0.3));
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let sw: Vec<f64> = mesh.quadrature_weights().iter().map(|w| w.sqrt()).collect();
    for i in 0..n_modes {
        let lam = kl.eigenvalues()[i];
        assert!((lam - vals[order[i]]).abs() <= 1e-8, "mode {i}");
        // Weighted mode must lie in the oracle eigenspace of lam (handles
        // the degenerate pairs created by the square's symmetry).
        let psi = DVector::from_fn(mesh.num_nodes(), |k, _| sw[k] * kl.modes()[(k, i)]);
        let mut proj = 0.0;
        for (k, &lv) in vals.iter().enumerate() {
            if (lv - lam).abs() <= 1e-6 * lam.max(1e-12) {
                proj += vecs.column(k).dot(&psi).powi(2);
            }
        }
        assert!((proj - 1.0).abs() <= 1e-8, "mode {i}: projection {proj}");
    }
}

#[test]
fn kl_trace_and_orthonormality() {
    let mesh = Mesh::new(8).unwrap();
    let all = mesh.num_nodes();
    for (var, len) in [(1.0, 0.1), (2.5, 0.3)] {
        let kl = kl_decompose(&mesh, var, len, all).unwrap();
        let trace: f64 = kl.eigenvalues().iter().sum();
        assert!((trace - var).abs() <= 0.01 * var);
        assert!(kl.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }
    let kl = kl_decompose(&mesh, 1.0, 0.1, 30).unwrap();
    let w = DMatrix::from_diagonal(&DVector::from_vec(mesh.quadrature_weights()));
    let gram = kl.modes().transpose() * w * kl.modes();
    assert!((gram - DMatrix::identity(30, 30)).amax() <= 1e-8);
}

#[test]
fn kl_field_matches_direct_sum() {
    let mesh = Mesh::new(6).unwrap();
    let kl = kl_decompose(&mesh, 1.0, 0.2, 8).unwrap();
    let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.9).cos()).collect();
    let field = kl.kl_field(&v, &mesh).unwrap();
    for cell in 0..mesh.num_cells() {
        let mut log = 0.0;
        for &node in mesh.cell_nodes(cell).iter() {
            for (i, vi) in v.iter().enumerate() {
                log += 0.25 * vi * kl.eigenvalues()[i].sqrt() * kl.modes()[(node, i)];
            }
        }
        assert!((field.values()[cell] - log.exp()).abs() <= 1e-12 * log.exp());
    }
    let zero = kl.kl_field(&[0.0; 8], &mesh).unwrap();
    assert!(zero.values().iter().all(|&k| k == 1.0));
}

#[test]
fn example_one_fixture_is_reproduced_exactly() {
    let cfg = RunConfig::load(&fixture("example1.toml")).unwrap();
    let problem = InverseProblem::build(&cfg.problem.settings).unwrap();
    let truth = problem.truth();
    let stored_truth = read_samples_csv(File::open(fixture("example1/truth.csv")).unwrap(), "truth").unwrap();
    assert_eq!(truth, stored_truth[0]);

    let synth = problem.synthesize(&truth).unwrap();
    let (sensors, noiseless) = read_data_csv(File::open(fixture("example1/noiseless.csv")).unwrap(), "n").unwrap();
    let (_, data) = read_data_csv(File::open(fixture("example1/data.csv")).unwrap(), "d").unwrap();
    assert_eq!(sensors.len(), 71);
    assert_eq!(sensors, problem.sensors);
    assert_eq!(synth.noiseless, noiseless);
    assert_eq!(synth.data, data);

    let w = problem.whitened(&data, synth.noise_std).unwrap();
    let v_true = w.whiten(&truth).unwrap();
    let chi2 = w.misfit(&v_true).unwrap().norm_squared() / 71.0;
    assert!((0.3..=3.0).contains(&chi2), "chi2/m = {chi2}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn observation_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, seed in 0u64..1000) {
        let mesh = Mesh::new(7).unwrap();
        let op = ObservationOperator::new(&mesh, benchmark_sensors()).unwrap();
        let mut r = dnnrto::rng::stream(seed, "test", 0);
        let p = dnnrto::rng::standard_normal_vec(&mut r, mesh.num_nodes());
        let q = dnnrto::rng::standard_normal_vec(&mut r, mesh.num_nodes());
        let mix: Vec<f64> = p.iter().zip(&q).map(|(x, y)| a * x + b * y).collect();
        let lhs = op.observe(&mix).unwrap();
        let (op_p, op_q) = (op.observe(&p).unwrap(), op.observe(&q).unwrap());
        for k in 0..lhs.len() {
            prop_assert!((lhs[k] - (a * op_p[k] + b * op_q[k])).abs() <= 1e-12);
        }
    }

    #[test]
    fn stiffness_has_positive_pivots(seed in 0u64..1000) {
        let mesh = Mesh::new(6).unwrap();
        let mut r = dnnrto::rng::stream(seed, "test", 1);
        let kappa: Vec<f64> = dnnrto::rng::standard_normal_vec(&mut r, mesh.num_cells()).iter().map(|z| (2.0 * z).exp()).collect();
        let field = PermeabilityField::new(kappa).unwrap();
        let k = assemble_free_dense(&mesh, &field, &BoundaryConditions::benchmark());
        prop_assert!((&k - k.transpose()).amax() <= 1e-12 * k.amax());
        let sol = solve_system(&mesh, &field, &benchmark_source(&mesh), &BoundaryConditions::benchmark()).unwrap();
        prop_assert!(sol.pivots().iter().all(|&d| d > 0.0));
    }
}
