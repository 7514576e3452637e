//! Gaussian-process plumbing on top of the kernel engine: dense covariance
//! assembly, zero-mean Gaussian log-likelihood with gradient, the expected
//! Fisher information, a damped Fisher-scoring fitter, and sampling.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{
    evaluate_alpha_derivative, evaluate_kernel, evaluate_kernel_derivative, EvaluationRequest,
};
use crate::error::{Error, Result};
use crate::models::SpectralModel;

/// Default panel size for matrix assembly; requests may override through the
/// `_with` variants.
const ASSEMBLY_NODES: usize = 4096;

/// Observation locations and values for a zero-mean process.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Fixed nugget variance added to the diagonal.
    pub nugget: f64,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, nugget: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "locations and observations differ in length: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::invalid("dataset must contain at least one observation"));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset entries must be finite"));
        }
        if !(nugget >= 0.0) {
            return Err(Error::invalid("nugget variance must be nonnegative"));
        }
        Ok(Dataset { x, y, nugget })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Evaluate the kernel on the deduplicated pairwise distances of `x` and
/// scatter into the symmetric matrix; one engine call covers all entries.
fn assemble_from(
    x: &[f64],
    nugget: f64,
    eval: impl Fn(Vec<f64>) -> Result<crate::engine::KernelResult>,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut distances: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2 + 1);
    distances.push(0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push((x[i] - x[j]).abs());
        }
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distances.dedup();

    let result = eval(distances.clone())?;
    let lookup: std::collections::HashMap<u64, f64> = distances
        .iter()
        .zip(&result.values)
        .map(|(&r, &v)| (r.to_bits(), v))
        .collect();

    let mut mat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let r = (x[i] - x[j]).abs();
            let v = lookup[&r.to_bits()];
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    for i in 0..n {
        mat[(i, i)] += nugget;
    }
    Ok(mat)
}

/// Dense covariance matrix `K(|x_i - x_j|) + eta I` with relative max-norm
/// error at most `eps`.
pub fn assemble_covariance(
    model: &SpectralModel,
    x: &[f64],
    eps: f64,
    nugget: f64,
) -> Result<DMatrix<f64>> {
    assemble_covariance_with(model, x, eps, nugget, ASSEMBLY_NODES)
}

pub fn assemble_covariance_with(
    model: &SpectralModel,
    x: &[f64],
    eps: f64,
    nugget: f64,
    nodes_per_panel: usize,
) -> Result<DMatrix<f64>> {
    assemble_from(x, nugget, |distances| {
        evaluate_kernel(
            &EvaluationRequest::new(model.clone(), distances, eps)
                .with_nodes_per_panel(nodes_per_panel),
        )
    })
}

/// Derivative covariance `d Sigma / d theta_j` (no nugget: the nugget is a
/// fixed input, not a parameter).
pub fn assemble_covariance_derivative(
    model: &SpectralModel,
    x: &[f64],
    eps: f64,
    param_index: usize,
) -> Result<DMatrix<f64>> {
    assemble_covariance_derivative_with(model, x, eps, param_index, ASSEMBLY_NODES)
}

pub fn assemble_covariance_derivative_with(
    model: &SpectralModel,
    x: &[f64],
    eps: f64,
    param_index: usize,
    nodes_per_panel: usize,
) -> Result<DMatrix<f64>> {
    let is_alpha = Some(param_index) == model.alpha_index();
    assemble_from(x, 0.0, |distances| {
        let req = EvaluationRequest::new(model.clone(), distances, eps)
            .with_nodes_per_panel(nodes_per_panel);
        if is_alpha {
            evaluate_alpha_derivative(&req)
        } else {
            evaluate_kernel_derivative(&req, param_index)
        }
    })
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Failure reports the pivot index where positive definiteness broke down.
#[derive(Debug)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn new(mat: &DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if mat.ncols() != n {
            return Err(Error::invalid("Cholesky requires a square matrix"));
        }
        let mut l = mat.lower_triangle();
        for j in 0..n {
            let mut d = l[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        // Zero the strict upper triangle left over from the copy.
        for i in 0..n {
            for j in (i + 1)..n {
                l[(i, j)] = 0.0;
            }
        }
        Ok(CholeskyFactor { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solve `Sigma v = rhs`.
    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut v = rhs.to_vec();
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= self.l[(i, k)] * v[k];
            }
            v[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = v[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * v[k];
            }
            v[i] = s / self.l[(i, i)];
        }
        v
    }

    /// Solve `Sigma W = B` column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = (0..n).map(|i| b[(i, c)]).collect();
            let sol = self.solve_vec(&col);
            for i in 0..n {
                out[(i, c)] = sol[i];
            }
        }
        out
    }
}

/// Zero-mean Gaussian log-likelihood
/// `-1/2 (y' Sigma^-1 y + log det Sigma + N log 2 pi)`;
/// the factorization is returned for reuse.
pub fn log_likelihood(sigma: &DMatrix<f64>, y: &[f64]) -> Result<(f64, CholeskyFactor)> {
    if sigma.nrows() != y.len() {
        return Err(Error::invalid("matrix and data dimensions differ"));
    }
    let chol = CholeskyFactor::new(sigma)?;
    let v = chol.solve_vec(y);
    let quad: f64 = y.iter().zip(&v).map(|(a, b)| a * b).sum();
    let n = y.len() as f64;
    let ll = -0.5 * (quad + chol.log_det() + n * (2.0 * std::f64::consts::PI).ln());
    Ok((ll, chol))
}

/// Gradient of the log-likelihood with respect to every free parameter:
/// `dl/dtheta_j = 1/2 (y' Sigma^-1 dSigma Sigma^-1 y - tr(Sigma^-1 dSigma))`.
pub fn loglik_gradient(
    model: &SpectralModel,
    dataset: &Dataset,
    eps: f64,
) -> Result<Vec<f64>> {
    let sigma = assemble_covariance(model, &dataset.x, eps, dataset.nugget)?;
    let (_, chol) = log_likelihood(&sigma, &dataset.y)?;
    loglik_gradient_with(model, dataset, eps, &chol, ASSEMBLY_NODES)
}

/// Gradient reusing an existing factorization of `Sigma(theta)`.
pub fn loglik_gradient_with(
    model: &SpectralModel,
    dataset: &Dataset,
    eps: f64,
    chol: &CholeskyFactor,
    nodes_per_panel: usize,
) -> Result<Vec<f64>> {
    let v = chol.solve_vec(&dataset.y);
    let n_params = model.params().len();
    let mut grad = Vec::with_capacity(n_params);
    for j in 0..n_params {
        let dsigma =
            assemble_covariance_derivative_with(model, &dataset.x, eps, j, nodes_per_panel)?;
        let w = chol.solve_mat(&dsigma);
        let trace: f64 = (0..w.nrows()).map(|i| w[(i, i)]).sum();
        let dv = &dsigma * DMatrix::from_column_slice(v.len(), 1, &v);
        let quad: f64 = v.iter().enumerate().map(|(i, &vi)| vi * dv[(i, 0)]).sum();
        grad.push(0.5 * (quad - trace));
    }
    Ok(grad)
}

/// Expected Fisher information
/// `I_jk = 1/2 tr(Sigma^-1 dSigma_j Sigma^-1 dSigma_k)`.
pub fn expected_fisher(model: &SpectralModel, x: &[f64], eps: f64, nugget: f64) -> Result<DMatrix<f64>> {
    let sigma = assemble_covariance(model, x, eps, nugget)?;
    let chol = CholeskyFactor::new(&sigma)?;
    expected_fisher_with(model, x, eps, &chol, ASSEMBLY_NODES)
}

pub fn expected_fisher_with(
    model: &SpectralModel,
    x: &[f64],
    eps: f64,
    chol: &CholeskyFactor,
    nodes_per_panel: usize,
) -> Result<DMatrix<f64>> {
    let p = model.params().len();
    let mut whitened: Vec<DMatrix<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let dsigma = assemble_covariance_derivative_with(model, x, eps, j, nodes_per_panel)?;
        whitened.push(chol.solve_mat(&dsigma));
    }
    let mut fisher = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let mut tr = 0.0;
            let (wj, wk) = (&whitened[j], &whitened[k]);
            for a in 0..wj.nrows() {
                for b in 0..wj.ncols() {
                    tr += wj[(a, b)] * wk[(b, a)];
                }
            }
            fisher[(j, k)] = 0.5 * tr;
            fisher[(k, j)] = 0.5 * tr;
        }
    }
    Ok(fisher)
}

/// Draw `L z` with `z` standard normal from a seeded generator; bit-exact
/// per seed.
pub fn sample_path(chol: &CholeskyFactor, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let n = chol.dim();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let l = chol.lower();
    (0..n)
        .map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum())
        .collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    mat.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Fisher scoring
// ---------------------------------------------------------------------------

/// One Fisher-scoring iteration summary.
#[derive(Debug, Clone)]
pub struct FitIteration {
    pub nll: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub step_scale: f64,
}

/// Maximum-likelihood fit summary.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    /// Terminal negative log-likelihood.
    pub nll: f64,
    /// Expected Fisher information at the optimum, in original coordinates.
    pub fisher: DMatrix<f64>,
    /// Implied standard deviations `sqrt((I^-1)_jj)`; `None` when the Fisher
    /// matrix is not numerically positive definite.
    pub implied_sd: Option<Vec<f64>>,
    pub trace: Vec<FitIteration>,
    pub converged: bool,
    pub hit_iteration_cap: bool,
}

/// Internal coordinates: log for positive-scale parameters, logit for the
/// singularity exponent, identity (with projection) for the rest.
#[derive(Clone, Copy)]
enum Transform {
    Log,
    Logit,
    Linear,
}

impl Transform {
    fn for_param(name: &str) -> Transform {
        match name {
            "phi" | "rho" | "nu" => Transform::Log,
            "alpha" => Transform::Logit,
            _ => Transform::Linear,
        }
    }

    fn to_internal(&self, v: f64) -> f64 {
        match self {
            Transform::Log => v.max(1e-12).ln(),
            Transform::Logit => {
                let c = v.clamp(1e-9, 1.0 - 1e-9);
                (c / (1.0 - c)).ln()
            }
            Transform::Linear => v,
        }
    }

    fn to_external(&self, u: f64) -> f64 {
        match self {
            Transform::Log => u.clamp(-27.0, 27.0).exp(),
            Transform::Logit => {
                let c = u.clamp(-13.8, 13.8);
                1.0 / (1.0 + (-c).exp())
            }
            Transform::Linear => u,
        }
    }

    /// `d theta / d u` at the external value `v`.
    fn jacobian(&self, v: f64) -> f64 {
        match self {
            Transform::Log => v,
            Transform::Logit => v * (1.0 - v),
            Transform::Linear => 1.0,
        }
    }
}

/// Project parameters back into the model's feasible region.
fn project(model: &SpectralModel, names: &[String], params: &mut [f64]) {
    for (name, p) in names.iter().zip(params.iter_mut()) {
        match name.as_str() {
            "phi" | "rho" | "nu" => *p = p.max(1e-6),
            "alpha" => *p = p.clamp(0.0, 1.0 - 1e-6),
            "tau" => *p = p.clamp(1e-6, 2.0),
            "lambda" => {
                if matches!(model, SpectralModel::GeneralizedMatern { .. }) {
                    *p = p.clamp(0.0, 1.0);
                } else {
                    *p = p.max(0.0);
                }
            }
            _ => {}
        }
    }
    // Integrability constraint of the generalized Matern.
    if let SpectralModel::GeneralizedMatern { .. } = model {
        let idx = |n: &str| names.iter().position(|x| x == n).unwrap();
        let (gi, ti, ni) = (idx("gamma"), idx("tau"), idx("nu"));
        let slack = params[ti] * (params[ni] + 0.5) - 1.0;
        if params[gi] >= slack {
            params[gi] = (slack - 1e-3).max(0.0);
        }
    }
}

/// Damped Fisher scoring `theta <- theta + s I^-1 grad(l)` with backtracking
/// in transformed coordinates. Stops when the step or the gradient is small;
/// the iteration cap returns the best-so-far with a warning flag.
pub fn fit_fisher_scoring(
    model0: &SpectralModel,
    dataset: &Dataset,
    eps: f64,
    max_iters: usize,
) -> Result<FitReport> {
    fit_fisher_scoring_with(model0, dataset, eps, max_iters, ASSEMBLY_NODES)
}

pub fn fit_fisher_scoring_with(
    model0: &SpectralModel,
    dataset: &Dataset,
    eps: f64,
    max_iters: usize,
    nodes_per_panel: usize,
) -> Result<FitReport> {
    let names = model0.param_names();
    let transforms: Vec<Transform> = names.iter().map(|n| Transform::for_param(n)).collect();

    let mut model = model0.clone();
    let nll_of = |m: &SpectralModel| -> Result<(f64, CholeskyFactor)> {
        let sigma =
            assemble_covariance_with(m, &dataset.x, eps, dataset.nugget, nodes_per_panel)?;
        let (ll, chol) = log_likelihood(&sigma, &dataset.y)?;
        Ok((-ll, chol))
    };

    // A failure at the starting point is the caller's problem.
    let (mut nll, mut chol) = nll_of(&model)?;

    let mut trace: Vec<FitIteration> = Vec::new();
    let mut converged = false;
    let mut hit_cap = false;

    for iter in 0..max_iters {
        let _ = iter;
        let grad = loglik_gradient_with(&model, dataset, eps, &chol, nodes_per_panel)?;
        let fisher = expected_fisher_with(&model, &dataset.x, eps, &chol, nodes_per_panel)?;

        let params = model.params();
        // Transform gradient and Fisher to internal coordinates.
        let jac: Vec<f64> = transforms
            .iter()
            .zip(&params)
            .map(|(t, &v)| t.jacobian(v))
            .collect();
        let p = params.len();
        let grad_u: Vec<f64> = (0..p).map(|j| grad[j] * jac[j]).collect();
        let mut fisher_u = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                fisher_u[(j, k)] = fisher[(j, k)] * jac[j] * jac[k];
            }
        }

        let grad_norm = grad_u.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= 1e-6 * (1.0 + nll.abs()) {
            converged = true;
            trace.push(FitIteration {
                nll,
                grad_norm,
                step_norm: 0.0,
                step_scale: 0.0,
            });
            break;
        }

        // Scoring direction with Levenberg damping if the Fisher matrix is
        // not positive definite.
        let mut damping = 0.0;
        let direction = loop {
            let mut damped = fisher_u.clone();
            for j in 0..p {
                damped[(j, j)] += damping;
            }
            match CholeskyFactor::new(&damped) {
                Ok(f) => break f.solve_vec(&grad_u),
                Err(_) => {
                    let scale = (0..p).map(|j| fisher_u[(j, j)].abs()).fold(1e-12, f64::max);
                    damping = if damping == 0.0 { 1e-8 * scale } else { damping * 10.0 };
                    if damping > 1e12 * scale {
                        return Err(Error::invalid(
                            "Fisher matrix is numerically singular; cannot form a scoring step",
                        ));
                    }
                }
            }
        };

        // Backtracking line search on the negative log-likelihood.
        let u0: Vec<f64> = transforms
            .iter()
            .zip(&params)
            .map(|(t, &v)| t.to_internal(v))
            .collect();
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let u_new: Vec<f64> = (0..p).map(|j| u0[j] + s * direction[j]).collect();
            let mut p_new: Vec<f64> = transforms
                .iter()
                .zip(&u_new)
                .map(|(t, &u)| t.to_external(u))
                .collect();
            project(&model, &names, &mut p_new);
            if let Ok(candidate) = model.with_params(&p_new) {
                if let Ok((nll_new, chol_new)) = nll_of(&candidate) {
                    if nll_new < nll {
                        accepted = Some((candidate, nll_new, chol_new, s));
                        break;
                    }
                }
            }
            s *= 0.5;
        }

        match accepted {
            Some((candidate, nll_new, chol_new, s_used)) => {
                let step_norm = direction.iter().map(|d| (s_used * d).powi(2)).sum::<f64>().sqrt();
                trace.push(FitIteration {
                    nll: nll_new,
                    grad_norm,
                    step_norm,
                    step_scale: s_used,
                });
                model = candidate;
                nll = nll_new;
                chol = chol_new;
                if step_norm <= 1e-8 {
                    converged = true;
                    break;
                }
            }
            None => {
                // No admissible decrease; treat as converged at this point.
                converged = true;
                trace.push(FitIteration {
                    nll,
                    grad_norm,
                    step_norm: 0.0,
                    step_scale: 0.0,
                });
                break;
            }
        }
    }
    if !converged {
        hit_cap = true;
    }

    let fisher = expected_fisher_with(&model, &dataset.x, eps, &chol, nodes_per_panel)?;
    let implied_sd = CholeskyFactor::new(&fisher).ok().map(|f| {
        let p = fisher.nrows();
        let identity = DMatrix::identity(p, p);
        let inv = f.solve_mat(&identity);
        (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect::<Vec<f64>>()
    });

    Ok(FitReport {
        param_names: names,
        params: model.params(),
        nll,
        fisher,
        implied_sd,
        trace,
        converged,
        hit_iteration_cap: hit_cap,
    })
}
