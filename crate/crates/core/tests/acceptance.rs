//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use ske::engine::{
    evaluate_alpha_derivative, evaluate_kernel, evaluate_kernel_derivative,
    evaluate_kernel_trapezoid, EvaluationRequest,
};
use ske::gp::{
    assemble_covariance_with, fit_fisher_scoring_with, log_likelihood, loglik_gradient,
    min_eigenvalue, sample_path, CholeskyFactor, Dataset,
};
use ske::models::SpectralModel;
use ske::oracles::{self, gamma, reference, Precision};
use ske::quadrature::{gauss_jacobi_power, gauss_legendre};
use ske::truncation::{bound_branch, truncation_bound, upper_incomplete_gamma, BoundBranch};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

/// Matern with rho = 1 normalized analytically so K(0) = 1.
fn normalized_matern(nu: f64, rho: f64) -> SpectralModel {
    let k0 = std::f64::consts::PI.sqrt() * gamma(nu) / (gamma(nu + 0.5) * rho.powf(2.0 * nu));
    SpectralModel::matern((1.0 / k0).sqrt(), rho, nu).unwrap()
}

/// Singular Matern normalized analytically so K(0) = 1.
fn normalized_singular(rho: f64, nu: f64, alpha: f64) -> SpectralModel {
    let k0 = rho.powf(-alpha - 2.0 * nu) * gamma(0.5 * (1.0 - alpha)) * gamma(nu + 0.5 * alpha)
        / gamma(nu + 0.5);
    SpectralModel::singular_matern((1.0 / k0).sqrt(), rho, nu, alpha).unwrap()
}

#[test]
fn criterion_1_pointwise_accuracy_and_estimate_sharpness() {
    let model = normalized_matern(0.51, 1.0);
    let phi = model.params()[0];
    let rs: Vec<f64> = (0..100)
        .map(|i| 10f64.powf(-8.0 + 8.0 * i as f64 / 99.0))
        .collect();
    let oracle: Vec<f64> = rs
        .iter()
        .map(|&r| oracles::matern_kernel_closed_form(r, phi, 1.0, 0.51).unwrap())
        .collect();

    let mut worst_ratio = 0.0f64;
    let mut detail = String::new();
    for eps in [1e-4, 1e-6, 1e-8, 1e-10, 1e-12] {
        let req = EvaluationRequest::new(model.clone(), rs.clone(), eps).with_nodes_per_panel(256);
        let out = evaluate_kernel(&req).unwrap();
        let mut under_half = 0usize;
        let mut below = 0usize;
        for i in 0..rs.len() {
            let err = (out.values[i] - oracle[i]).abs();
            worst_ratio = worst_ratio.max(err / eps);
            assert!(
                err <= eps,
                "eps={eps:e}, r={}: error {err:e} exceeds tolerance",
                rs[i]
            );
            if out.estimates[i] < err {
                below += 1;
                if out.estimates[i] < 0.5 * err {
                    under_half += 1;
                }
            }
        }
        assert_eq!(under_half, 0, "estimates below half the true error at eps={eps:e}");
        assert!(
            below <= 5,
            "estimate below the true error at {below} of 100 points (eps={eps:e})"
        );
        detail.push_str(&format!("eps={eps:.0e} below={below} "));
    }
    report(
        "criterion 1 (pointwise accuracy, estimate sharpness)",
        true,
        &format!("worst err/eps = {worst_ratio:.3}; {detail}"),
    );
}

fn matrix_norm_errors(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64, f64) {
    let diff = a - b;
    let max_ref = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_err = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fro_ref = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let fro_err = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Spectral norm of the symmetric difference by power iteration.
    let n = diff.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0f64;
    for _ in 0..60 {
        let w = &diff * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = w / norm;
    }
    let spec_ref = {
        let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut l = 0.0f64;
        for _ in 0..40 {
            let w = b * &v;
            let norm = w.norm();
            l = norm;
            v = w / norm;
        }
        l
    };
    (max_err / max_ref, fro_err / fro_ref, lambda / spec_ref)
}

#[test]
fn criterion_2_matrix_norm_accuracy() {
    let start = std::time::Instant::now();
    let model = normalized_singular(0.5, 0.51, 0.1);
    let mut rng = ChaCha12Rng::seed_from_u64(20260811);
    let n = 1000usize;
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let nodes = 4096;

    let alpha_idx = model.alpha_index().unwrap();
    let nu_idx = 2;
    let assemble = |eps: f64, which: usize| -> DMatrix<f64> {
        match which {
            0 => assemble_covariance_with(&model, &x, eps, 0.0, nodes).unwrap(),
            1 => ske::gp::assemble_covariance_derivative_with(&model, &x, eps, nu_idx, nodes)
                .unwrap(),
            _ => ske::gp::assemble_covariance_derivative_with(&model, &x, eps, alpha_idx, nodes)
                .unwrap(),
        }
    };

    let reference: Vec<DMatrix<f64>> = (0..3).map(|w| assemble(1e-12, w)).collect();
    let mut detail = String::new();
    for eps in [1e-4, 1e-6, 1e-8, 1e-10] {
        for which in 0..3 {
            let sigma = assemble(eps, which);
            let (e_max, e_fro, e_spec) = matrix_norm_errors(&sigma, &reference[which]);
            let label = ["S", "dS/dnu", "dS/dalpha"][which];
            assert!(
                e_max <= eps && e_fro <= eps && e_spec <= eps,
                "{label} at eps={eps:e}: norms ({e_max:e}, {e_fro:e}, {e_spec:e})"
            );
            if which == 0 {
                detail.push_str(&format!("eps={eps:.0e} max={e_max:.1e} "));
            }
        }
    }
    report(
        "criterion 2 (matrix-norm accuracy, N=1000)",
        true,
        &format!("{detail}; elapsed {:.1}s", start.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_3_truncation_theorem_and_lemma_sweeps() {
    // Theorem sweep: bound dominates the oscillatory-quadrature oracle.
    let mut checked = 0usize;
    for &beta in &[1.2, 1.5, 2.0, 3.0, 4.0] {
        for &b in &[1.0, 10.0, 100.0] {
            for &r in &[0.0, 1e-3, 0.1, 1.0, 10.0] {
                let bound = truncation_bound(1.0, beta, b, r).unwrap();
                let exact = reference::power_law_tail_integral(1.0, beta, b, r, 1e-11).unwrap();
                assert!(
                    exact.abs() <= bound * (1.0 + 1e-8) + 1e-13,
                    "bound violated at beta={beta}, b={b}, r={r}: |{exact:e}| > {bound:e}"
                );
                checked += 1;
            }
        }
    }
    // Lemma sweep: |Gamma(-s, iy)| <= min(y^-s-1, y^-s / s).
    let mut lemma = 0usize;
    for &s in &[0.25, 0.5, 1.0, 2.0, 3.0] {
        for k in 0..25 {
            let y = 10f64.powf(-1.0 + 3.0 * k as f64 / 24.0);
            let g = upper_incomplete_gamma(-s, num_complex::Complex64::new(0.0, y)).unwrap();
            let cap = y.powf(-s - 1.0).min(y.powf(-s) / s);
            assert!(
                g.norm() <= cap * (1.0 + 1e-7),
                "lemma violated at s={s}, y={y}: {} > {cap}",
                g.norm()
            );
            lemma += 1;
        }
    }
    // Branch crossover at b r = (beta - 1) / (2 pi) +- 1e-12.
    for &beta in &[1.5, 2.0, 3.0] {
        let b = 2.0;
        let r_star = (beta - 1.0) / (2.0 * std::f64::consts::PI * b);
        assert_eq!(bound_branch(beta, b, r_star * (1.0 - 1e-12)), BoundBranch::SmallBr);
        assert_eq!(bound_branch(beta, b, r_star * (1.0 + 1e-12)), BoundBranch::LargeBr);
    }
    report(
        "criterion 3 (truncation theorem & lemma sweeps)",
        true,
        &format!("{checked} theorem points, {lemma} lemma points, 0 violations"),
    );
}

#[test]
fn criterion_4_singular_matern_cancellation_study() {
    let start = std::time::Instant::now();
    let (nu, alpha) = (2.1, 0.3);

    // Double precision loses the cancellation at rho = 10.
    let m10 = normalized_singular(10.0, nu, alpha);
    let phi10 = m10.params()[0];
    let double_k1 = oracles::singular_matern_1f2(1.0, phi10, 10.0, nu, alpha, Precision::Double)
        .unwrap();
    assert!(
        double_k1.abs() > 1e10,
        "double-precision K(1) should be garbage, got {double_k1:e}"
    );

    // Engine vs the extended-precision oracle on 50 points.
    let rs: Vec<f64> = (0..50).map(|i| 0.01 + 0.99 * i as f64 / 49.0).collect();
    let req = EvaluationRequest::new(m10.clone(), rs.clone(), 1e-8).with_nodes_per_panel(1024);
    let engine = evaluate_kernel(&req).unwrap();
    let mut worst = 0.0f64;
    for (i, &r) in rs.iter().enumerate() {
        assert!(engine.values[i].abs() <= 1.0 + 1e-8);
        let big =
            oracles::singular_matern_1f2(r, phi10, 10.0, nu, alpha, Precision::Bits(3072)).unwrap();
        worst = worst.max((engine.values[i] - big).abs());
    }
    assert!(
        worst <= 1e-8,
        "engine vs extended-precision oracle disagree by {worst:e}"
    );

    // Engine-built covariances stay positive definite.
    let x: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let mut eigs = Vec::new();
    for rho in [2.0, 5.0, 10.0] {
        let model = normalized_singular(rho, nu, alpha);
        let sigma = assemble_covariance_with(&model, &x, 1e-10, 0.0, 1024).unwrap();
        let lambda = min_eigenvalue(&sigma);
        assert!(lambda > 0.0, "min eigenvalue {lambda:e} at rho={rho}");
        eigs.push(lambda);
    }
    report(
        "criterion 4 (singular-Matern cancellation study)",
        true,
        &format!(
            "double |K(1)|={double_k1:.2e}, oracle agreement {worst:.2e}, min eigs {eigs:?}, elapsed {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_tail_decay_theorem() {
    for alpha in [0.3, 0.7] {
        let model = SpectralModel::exponential_test(1.0, alpha).unwrap();
        let rs: Vec<f64> = (0..25).map(|i| 10f64.powf(2.0 + 2.0 * i as f64 / 24.0)).collect();
        let req = EvaluationRequest::new(model, rs.clone(), 1e-9).with_nodes_per_panel(1024);
        let out = evaluate_kernel(&req).unwrap();

        // Closed form agrees within 1e-9 of K(0).
        let mut worst = 0.0f64;
        for (i, &r) in rs.iter().enumerate() {
            let closed = oracles::exp_sdf_alpha_kernel(r, alpha).unwrap();
            worst = worst.max((out.values[i] - closed).abs());
        }
        assert!(
            worst <= 1e-9 * out.scale,
            "closed form disagrees by {worst:e} at alpha={alpha}"
        );

        // Log-log slope of K over [1e2, 1e4] within +-0.05 of -(1 - alpha).
        let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &r) in rs.iter().enumerate() {
            let k = out.values[i];
            assert!(k > 0.0, "kernel not positive at r={r}");
            let (lx, ly) = (r.ln(), k.ln());
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            n += 1.0;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let want = -(1.0 - alpha);
        assert!(
            (slope - want).abs() <= 0.05,
            "alpha={alpha}: slope {slope:.4} vs {want:.4}"
        );
        println!("  alpha={alpha}: slope {slope:.4} (want {want:.4}), closed-form gap {worst:.2e}");
    }
    report("criterion 5 (tail-decay theorem)", true, "slopes within 0.05");
}

#[test]
fn criterion_6_performance() {
    let start = std::time::Instant::now();
    let model = normalized_singular(1.0, 0.55, 0.5);
    let m = 1 << 16;
    let mut rng = ChaCha12Rng::seed_from_u64(6);

    // 10x NUFFT-vs-direct at n = 1e4, eps = 1e-8.
    let n = 10_000usize;
    let distances: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut req =
        EvaluationRequest::new(model.clone(), distances.clone(), 1e-8).with_nodes_per_panel(m);
    let warm = evaluate_kernel(&req).unwrap();
    let time_runs = |req: &EvaluationRequest, runs: usize| -> f64 {
        let mut times: Vec<f64> = (0..runs)
            .map(|_| {
                let t = std::time::Instant::now();
                let _ = evaluate_kernel(req).unwrap();
                t.elapsed().as_secs_f64()
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times[runs / 2]
    };
    let t_nufft = time_runs(&req, 3);
    req.force_direct_sum = true;
    let t_direct = time_runs(&req, 3);
    let ratio = t_direct / t_nufft;
    assert!(
        ratio >= 10.0,
        "adaptive+nufft only {ratio:.1}x faster than direct ({t_nufft:.3}s vs {t_direct:.3}s)"
    );

    // Quasilinear scaling: slope of log-time vs log-n at most 1.3.
    let mut pts = Vec::new();
    for &nn in &[1_000usize, 10_000, 100_000] {
        let d: Vec<f64> = (0..nn).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rq = EvaluationRequest::new(model.clone(), d, 1e-8).with_nodes_per_panel(m);
        let _ = evaluate_kernel(&rq).unwrap();
        let t = time_runs(&rq, 3);
        pts.push(((nn as f64).ln(), t.ln()));
    }
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let np = pts.len() as f64;
    let slope = (np * sxy - sx * sy) / (np * sxx - sx * sx);
    assert!(slope <= 1.3, "time-vs-n slope {slope:.3} exceeds 1.3");

    // Trapezoid node demand at equal audited accuracy: sweep until the
    // audit passes or the guard trips; either way it must need at least
    // 10x the adaptive node count.
    let spots: Vec<f64> = (0..32).map(|i| distances[i * 311 % n]).collect();
    let ref_vals = evaluate_kernel(
        &EvaluationRequest::new(model.clone(), spots.clone(), 1e-10).with_nodes_per_panel(m),
    )
    .unwrap();
    let tail = model.tail_law().unwrap();
    let mut b_end = 10.0f64;
    while truncation_bound(tail.c(), tail.beta, b_end, 0.0).unwrap() > 0.25e-8 && b_end < 1e8 {
        b_end *= 2.0;
    }
    let cap = 1usize << 24;
    let mut m_trap = 1usize << 16;
    let mut needed: Option<usize> = None;
    let mut last_err = f64::NAN;
    while m_trap <= cap {
        let h = b_end / (m_trap - 1) as f64;
        let (vals, _) = evaluate_kernel_trapezoid(&model, &spots, h, m_trap, 1e-9).unwrap();
        let err = vals
            .iter()
            .zip(&ref_vals.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        last_err = err;
        if err <= 1e-8 * warm.scale {
            needed = Some(m_trap);
            break;
        }
        m_trap *= 4;
    }
    let trap_nodes = needed.unwrap_or(cap * 4); // guard-tripped: needs beyond the cap
    assert!(
        trap_nodes >= 10 * warm.total_nodes,
        "trapezoid needs {trap_nodes} nodes vs adaptive {}",
        warm.total_nodes
    );
    report(
        "criterion 6 (performance)",
        true,
        &format!(
            "speedup {ratio:.0}x, slope {slope:.2}, trapezoid needs >{trap_nodes} nodes \
             (adaptive {}, trapezoid audit floor {last_err:.1e}); elapsed {:.0}s",
            warm.total_nodes,
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_derivative_correctness() {
    let model = normalized_singular(0.5, 0.51, 0.1);
    let rs = vec![0.01, 0.1, 1.0];
    let names = model.param_names();
    let theta = model.params();

    // Kernel derivatives vs central finite differences.
    for (j, name) in names.iter().enumerate() {
        let req = EvaluationRequest::new(model.clone(), rs.clone(), 1e-11).with_nodes_per_panel(512);
        let analytic = if Some(j) == model.alpha_index() {
            evaluate_alpha_derivative(&req).unwrap()
        } else {
            evaluate_kernel_derivative(&req, j).unwrap()
        };
        let h = 1e-5 * theta[j].abs().max(1e-2);
        let perturbed = |sign: f64| {
            let mut p = theta.clone();
            p[j] += sign * h;
            let m = model.with_params(&p).unwrap();
            evaluate_kernel(&EvaluationRequest::new(m, rs.clone(), 1e-11).with_nodes_per_panel(512))
                .unwrap()
        };
        let up = perturbed(1.0);
        let dn = perturbed(-1.0);
        for k in 0..rs.len() {
            let fd = (up.values[k] - dn.values[k]) / (2.0 * h);
            let scale = analytic.values[k].abs().max(1e-3);
            assert!(
                (analytic.values[k] - fd).abs() <= 1e-5 * scale,
                "{name} at r={}: analytic {} vs fd {}",
                rs[k],
                analytic.values[k],
                fd
            );
        }
    }

    // Log-likelihood gradient vs finite differences at N = 50.
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sigma = assemble_covariance_with(&model, &x, 1e-10, 0.05, 1024).unwrap();
    let chol = CholeskyFactor::new(&sigma).unwrap();
    let y = sample_path(&chol, 99);
    let dataset = Dataset::new(x.clone(), y.clone(), 0.05).unwrap();
    let grad = loglik_gradient(&model, &dataset, 1e-10).unwrap();
    for j in 0..theta.len() {
        // Step large enough that assembly noise does not dominate the
        // difference quotient.
        let h = 1e-4 * theta[j].abs().max(1e-2);
        let f = |p: &[f64]| -> f64 {
            let m = model.with_params(p).unwrap();
            let s = assemble_covariance_with(&m, &x, 1e-11, 0.05, 1024).unwrap();
            log_likelihood(&s, &y).unwrap().0
        };
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[j] += h;
        dn[j] -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        let scale = grad[j].abs().max(1.0);
        assert!(
            (grad[j] - fd).abs() <= 1e-4 * scale,
            "loglik gradient {}: {} vs fd {}",
            names[j],
            grad[j],
            fd
        );
    }
    report(
        "criterion 7 (derivative correctness)",
        true,
        "kernel derivatives within 1e-5 of FD, loglik gradient within 1e-4",
    );
}

#[test]
fn criterion_8_quadrature_and_nufft_exactness() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    // Legendre: monomials of degree <= 2m-1.
    for &m in &[2usize, 5, 16, 33, 64] {
        let (a, b) = (rng.gen_range(-3.0..0.0), rng.gen_range(0.5..4.0));
        let rule = gauss_legendre(m, a, b).unwrap();
        for deg in 0..(2 * m) {
            let got = rule.apply(|x| x.powi(deg as i32));
            let want = (b.powi(deg as i32 + 1) - a.powi(deg as i32 + 1)) / (deg as f64 + 1.0);
            let scale = rule.apply(|x| x.powi(deg as i32).abs());
            assert!(
                (got - want).abs() <= 1e-12 * scale.max(1e-12),
                "legendre m={m} deg={deg}"
            );
        }
    }
    // Jacobi-power: weighted moments.
    for &alpha in &[0.1, 0.5, 0.9] {
        for &m in &[4usize, 16, 48] {
            let b = rng.gen_range(0.5..4.0);
            let rule = gauss_jacobi_power(m, b, alpha).unwrap();
            for deg in 0..(2 * m) {
                let got = rule.apply(|x| x.powi(deg as i32));
                let p = deg as f64 + 1.0 - alpha;
                let want = b.powf(p) / p;
                assert!(
                    (got - want).abs() <= 1e-12 * want.max(1.0),
                    "jacobi alpha={alpha} m={m} deg={deg}"
                );
            }
        }
    }
    // NUFFT accuracy suite.
    use num_complex::Complex64;
    for &delta in &[1e-6, 1e-9, 1e-12] {
        for &(m, n) in &[(1 << 12, 640), (1 << 14, 2000)] {
            let omega: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..5000.0)).collect();
            let c: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let plan = ske::nufft::plan_type3(&omega, &r, delta).unwrap();
            let fast = plan.execute(&c).unwrap();
            let exact = ske::nufft::direct_nudft(&omega, &c, &r);
            let norm1: f64 = c.iter().map(|v| v.norm()).sum();
            let err = fast
                .iter()
                .zip(&exact)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0f64, f64::max);
            assert!(
                err <= delta * norm1,
                "nufft m={m} n={n} delta={delta:e}: {err:e} > {:e}",
                delta * norm1
            );
        }
    }
    report(
        "criterion 8 (quadrature exactness, NUFFT accuracy)",
        true,
        "legendre/jacobi exactness at 1e-12; nufft within delta * ||c||_1 at 1e-6/1e-9/1e-12",
    );
}

#[test]
fn criterion_9_fit_recovery() {
    use rayon::prelude::*;
    let start = std::time::Instant::now();
    let truth = normalized_matern(0.75, 1.0);
    let nu_true = 0.75;

    let run_seed = |seed: u64| -> (bool, bool) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sigma = assemble_covariance_with(&truth, &x, 1e-8, 1e-4, 2048).unwrap();
        let chol = CholeskyFactor::new(&sigma).unwrap();
        let y = sample_path(&chol, seed.wrapping_mul(7919));
        let dataset = Dataset::new(x, y, 1e-4).unwrap();

        let start_model = {
            let mut p = truth.params();
            p[0] *= 1.3;
            p[1] *= 0.7;
            p[2] *= 1.25;
            truth.with_params(&p).unwrap()
        };
        let report = fit_fisher_scoring_with(&start_model, &dataset, 1e-5, 15, 1024).unwrap();
        // nll trace must be non-increasing.
        let monotone = report
            .trace
            .windows(2)
            .all(|w| w[1].nll <= w[0].nll + 1e-9);
        let nu_idx = 2;
        let recovered = match &report.implied_sd {
            Some(sd) => (report.params[nu_idx] - nu_true).abs() <= 3.0 * sd[nu_idx],
            None => false,
        };
        (recovered, monotone)
    };

    let results: Vec<(bool, bool)> = (0..20u64).into_par_iter().map(run_seed).collect();
    let recovered = results.iter().filter(|r| r.0).count();
    let all_monotone = results.iter().all(|r| r.1);
    assert!(all_monotone, "an nll trace increased");
    assert!(
        recovered >= 18,
        "nu recovered within 3 sd on only {recovered}/20 seeds"
    );

    // Nested-model study: singular fit on plain-Matern data keeps alpha
    // near zero and gains little likelihood.
    let nested: Vec<(f64, f64)> = (100..105u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sigma = assemble_covariance_with(&truth, &x, 1e-8, 1e-4, 2048).unwrap();
            let chol = CholeskyFactor::new(&sigma).unwrap();
            let y = sample_path(&chol, seed.wrapping_mul(104729));
            let dataset = Dataset::new(x, y, 1e-4).unwrap();

            let p = truth.params();
            let base_start = truth
                .with_params(&[p[0] * 1.2, p[1] * 0.8, p[2] * 1.2])
                .unwrap();
            let base = fit_fisher_scoring_with(&base_start, &dataset, 1e-5, 15, 1024).unwrap();
            let singular_start =
                SpectralModel::singular_matern(p[0] * 1.2, p[1] * 0.8, p[2] * 1.2, 0.02).unwrap();
            let sing = fit_fisher_scoring_with(&singular_start, &dataset, 1e-5, 15, 1024).unwrap();
            let alpha_idx = sing
                .param_names
                .iter()
                .position(|n| n == "alpha")
                .unwrap();
            (sing.params[alpha_idx], base.nll - sing.nll)
        })
        .collect();
    let nested_ok = nested
        .iter()
        .filter(|(alpha, gain)| *alpha <= 0.05 && *gain <= 2.0)
        .count();
    assert!(
        nested_ok * 2 > nested.len(),
        "nested-model check passed on only {nested_ok}/{} seeds ({nested:?})",
        nested.len()
    );
    report(
        "criterion 9 (fit recovery)",
        true,
        &format!(
            "nu within 3 sd on {recovered}/20 seeds, nested ok on {nested_ok}/{}, elapsed {:.0}s",
            nested.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}
