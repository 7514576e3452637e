//! Quadrature rules for panel integration of Fourier integrals.
//!
//! Three rule families are provided:
//!
//! * Gauss-Legendre on `[a, b]`, exact for polynomials of degree `2m - 1`,
//! * Gauss-Jacobi with the power-law weight `w(omega) = omega^-alpha` on
//!   `[0, b]`, exact for `w * p` with `deg p <= 2m - 1` (the weights absorb
//!   the singular factor, so integrands are sampled through their regular
//!   part only),
//! * the composite trapezoid rule on `[a, b]`.
//!
//! Standard-interval rules are memoized per `(kind, m, alpha)` since the
//! integration engine reuses one node count across all panels.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest node count accepted for the Jacobi-power rule; its nodes come from
/// an O(m^2) symmetric-tridiagonal eigensolve, which is only ever needed for
/// the origin panel.
pub const MAX_JACOBI_NODES: usize = 4096;

/// Which family a rule belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Legendre,
    JacobiPower,
    Trapezoid,
}

/// Nodes and weights discretizing `int_a^b w(omega) f(omega) d omega` as
/// `sum_j gamma_j f(omega_j)`.
///
/// For `JacobiPower` the weight function `w(omega) = omega^-alpha` is folded
/// into `gamma_j`, so callers must supply samples of the *regular* factor of
/// the integrand; applying `omega^-alpha` again would double-count it.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub a: f64,
    pub b: f64,
    /// Singularity exponent; zero unless `kind == JacobiPower`.
    pub alpha: f64,
    /// Strictly increasing, all within `[a, b]`.
    pub nodes: Vec<f64>,
    /// Strictly positive.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply the rule to samples of the (regular part of the) integrand.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `m`-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if m < 1 {
        return Err(Error::invalid("gauss_legendre requires m >= 1"));
    }
    if !a.is_finite() || !b.is_finite() || a >= b {
        return Err(Error::invalid(format!(
            "gauss_legendre requires a finite interval with a < b, got [{a}, {b}]"
        )));
    }
    let std = cached_standard_rule(RuleKind::Legendre, m, 0.0)?;
    // Affine image of the [-1, 1] rule.
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes = std.nodes.iter().map(|&x| mid + half * x).collect();
    let weights = std.weights.iter().map(|&w| half * w).collect();
    Ok(QuadratureRule {
        kind: RuleKind::Legendre,
        a,
        b,
        alpha: 0.0,
        nodes,
        weights,
    })
}

/// `m`-point Gauss rule on `[0, b]` for the weight `omega^-alpha`,
/// `0 <= alpha < 1`. Weights absorb the singular factor.
pub fn gauss_jacobi_power(m: usize, b: f64, alpha: f64) -> Result<QuadratureRule> {
    if m < 1 {
        return Err(Error::invalid("gauss_jacobi_power requires m >= 1"));
    }
    if m > MAX_JACOBI_NODES {
        return Err(Error::invalid(format!(
            "gauss_jacobi_power supports at most {MAX_JACOBI_NODES} nodes, got {m}"
        )));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!(
            "gauss_jacobi_power requires b > 0, got {b}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "gauss_jacobi_power requires 0 <= alpha < 1 (omega^-alpha must be integrable), got {alpha}"
        )));
    }
    let std = cached_standard_rule(RuleKind::JacobiPower, m, alpha)?;
    // Standard rule lives on [0, 1]; int_0^b w^-a p(w) dw = b^(1-a) int_0^1 u^-a p(bu) du.
    let wscale = b.powf(1.0 - alpha);
    let nodes = std.nodes.iter().map(|&x| b * x).collect();
    let weights = std.weights.iter().map(|&w| wscale * w).collect();
    Ok(QuadratureRule {
        kind: RuleKind::JacobiPower,
        a: 0.0,
        b,
        alpha,
        nodes,
        weights,
    })
}

/// Composite trapezoid rule with `m >= 2` equispaced nodes on `[a, b]`.
pub fn trapezoid(m: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if m < 2 {
        return Err(Error::invalid("trapezoid requires m >= 2"));
    }
    if !a.is_finite() || !b.is_finite() || a >= b {
        return Err(Error::invalid(format!(
            "trapezoid requires a finite interval with a < b, got [{a}, {b}]"
        )));
    }
    let h = (b - a) / (m - 1) as f64;
    let nodes: Vec<f64> = (0..m).map(|j| a + j as f64 * h).collect();
    let mut weights = vec![h; m];
    weights[0] = 0.5 * h;
    weights[m - 1] = 0.5 * h;
    Ok(QuadratureRule {
        kind: RuleKind::Trapezoid,
        a,
        b,
        alpha: 0.0,
        nodes,
        weights,
    })
}

// ---------------------------------------------------------------------------
// Standard-interval rule computation and cache
// ---------------------------------------------------------------------------

struct StandardRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(PartialEq, Eq, Hash)]
struct CacheKey {
    kind: RuleKind,
    m: usize,
    /// alpha rounded to 1e-12, stored as an integer so the key is hashable.
    alpha_bits: i64,
}

fn cache_key(kind: RuleKind, m: usize, alpha: f64) -> CacheKey {
    CacheKey {
        kind,
        m,
        alpha_bits: (alpha * 1e12).round() as i64,
    }
}

static RULE_CACHE: RwLock<Option<HashMap<CacheKey, Arc<StandardRule>>>> = RwLock::new(None);

fn cached_standard_rule(kind: RuleKind, m: usize, alpha: f64) -> Result<Arc<StandardRule>> {
    let key = cache_key(kind, m, alpha);
    if let Some(map) = RULE_CACHE.read().unwrap().as_ref() {
        if let Some(rule) = map.get(&key) {
            return Ok(rule.clone());
        }
    }
    let rule = Arc::new(match kind {
        RuleKind::Legendre => legendre_standard(m),
        RuleKind::JacobiPower => jacobi_power_standard(m, alpha)?,
        RuleKind::Trapezoid => unreachable!("trapezoid rules are not cached"),
    });
    let mut guard = RULE_CACHE.write().unwrap();
    let map = guard.get_or_insert_with(HashMap::new);
    Ok(map.entry(key).or_insert_with(|| rule).clone())
}

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration in theta
/// (x = cos theta) on the three-term recurrence, with the classical
/// asymptotic initial guesses. The recurrence is evaluated in lockstep
/// across all pending roots so the inner loop vectorizes.
fn legendre_standard(m: usize) -> StandardRule {
    if m == 1 {
        return StandardRule {
            nodes: vec![0.0],
            weights: vec![2.0],
        };
    }
    let half = m / 2;
    // Roots in (0, pi/2): theta_k ~ pi (4k - 1) / (4m + 2), k = 1..=half
    // counting from the x = +1 end.
    let mut idx: Vec<usize> = (1..=half).collect();
    let results: Vec<(f64, f64)> = idx
        .par_chunks_mut(1024.max(half / 64 + 1))
        .flat_map_iter(|chunk| {
            let mut theta: Vec<f64> = chunk
                .iter()
                .map(|&k| std::f64::consts::PI * (4.0 * k as f64 - 1.0) / (4.0 * m as f64 + 2.0))
                .collect();
            let n = theta.len();
            let mut x = vec![0.0f64; n];
            let mut pm = vec![0.0f64; n];
            let mut pm1 = vec![0.0f64; n];
            for _iter in 0..16 {
                for i in 0..n {
                    x[i] = theta[i].cos();
                }
                evaluate_legendre_lockstep(m, &x, &mut pm, &mut pm1);
                // dP/dtheta = -sin(theta) P'(x); P'(x) = m (x P_m - P_{m-1}) / (x^2 - 1)
                let mut max_step = 0.0f64;
                for i in 0..n {
                    let s = theta[i].sin();
                    // x^2 - 1 = -sin^2 theta
                    let dp_dtheta = m as f64 * (x[i] * pm[i] - pm1[i]) / s;
                    let step = pm[i] / dp_dtheta;
                    theta[i] -= step;
                    max_step = max_step.max(step.abs());
                }
                if max_step < 1e-15 {
                    break;
                }
            }
            // Final weights: w = 2 / (sin^2 theta * P'_m(x)^2).
            for i in 0..n {
                x[i] = theta[i].cos();
            }
            evaluate_legendre_lockstep(m, &x, &mut pm, &mut pm1);
            (0..n)
                .map(|i| {
                    let s2 = theta[i].sin().powi(2);
                    let dpdx = m as f64 * (x[i] * pm[i] - pm1[i]) / (-s2);
                    (x[i], 2.0 / (s2 * dpdx * dpdx))
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut nodes = vec![0.0f64; m];
    let mut weights = vec![0.0f64; m];
    // results[k-1] is the k-th root from the +1 end; mirror for the -1 side.
    for (j, &(x, w)) in results.iter().enumerate() {
        nodes[m - 1 - j] = x;
        weights[m - 1 - j] = w;
        nodes[j] = -x;
        weights[j] = w;
    }
    if m % 2 == 1 {
        let mid = m / 2;
        let mut pm = vec![0.0f64];
        let mut pm1 = vec![0.0f64];
        evaluate_legendre_lockstep(m, &[0.0], &mut pm, &mut pm1);
        let dpdx = m as f64 * (0.0 * pm[0] - pm1[0]) / (0.0 - 1.0);
        nodes[mid] = 0.0;
        weights[mid] = 2.0 / (dpdx * dpdx);
    }
    StandardRule { nodes, weights }
}

/// Evaluate P_m and P_{m-1} at each x via the recurrence, in lockstep.
fn evaluate_legendre_lockstep(m: usize, x: &[f64], pm: &mut [f64], pm1: &mut [f64]) {
    for i in 0..x.len() {
        pm1[i] = 1.0;
        pm[i] = x[i];
    }
    for j in 1..m {
        let aj = (2.0 * j as f64 + 1.0) / (j as f64 + 1.0);
        let bj = j as f64 / (j as f64 + 1.0);
        for i in 0..x.len() {
            let next = aj * x[i] * pm[i] - bj * pm1[i];
            pm1[i] = pm[i];
            pm[i] = next;
        }
    }
}

/// Gauss-Jacobi nodes/weights on [0, 1] for the weight u^-alpha via
/// Golub-Welsch: eigenvalues of the Jacobi matrix give the nodes, and the
/// Christoffel sum over orthonormal polynomials gives the weights.
fn jacobi_power_standard(m: usize, alpha: f64) -> Result<StandardRule> {
    // Recurrence coefficients for the weight (1 + x)^beta on [-1, 1] with
    // beta = -alpha (Jacobi a = 0, b = beta):
    //   diag_0 = beta_ / (beta_ + 2)
    //   diag_k = beta_^2 / ((2k + beta_)(2k + beta_ + 2))
    //   off_k^2 = 4 k (k)(k + beta_)(k + beta_) ... (general Jacobi formula with a = 0)
    let bt = -alpha;
    // One extra coefficient pair so the recurrence can reach p_m for the
    // Newton polish below.
    let mut diag = vec![0.0f64; m + 1];
    let mut off = vec![0.0f64; m];
    diag[0] = bt / (bt + 2.0);
    for k in 1..=m {
        let k_ = k as f64;
        let denom = 2.0 * k_ + bt;
        diag[k] = (bt * bt) / (denom * (denom + 2.0));
        let num = 4.0 * k_ * k_ * (k_ + bt) * (k_ + bt);
        off[k - 1] = (num / (denom * denom * (denom + 1.0) * (denom - 1.0))).sqrt();
    }
    // mu0 = int_-1^1 (1 + x)^beta dx = 2^(beta+1) / (beta + 1)
    let mu0 = 2f64.powf(bt + 1.0) / (bt + 1.0);

    let mut eig = tridiagonal_eigenvalues(&diag[..m], &off[..m - 1])?;
    eig.sort_by(|p, q| p.partial_cmp(q).unwrap());

    // Orthonormal-polynomial recurrence: returns (p_m, p_m', sum_{k<m} p_k^2).
    let polys = |x: f64| -> (f64, f64, f64) {
        let mut prev = 0.0f64; // p_{-1}
        let mut cur = 1.0 / mu0.sqrt(); // p_0
        let mut dprev = 0.0f64;
        let mut dcur = 0.0f64;
        let mut sum = cur * cur;
        for k in 0..m {
            let e_prev = if k == 0 { 0.0 } else { off[k - 1] };
            let next = ((x - diag[k]) * cur - e_prev * prev) / off[k];
            let dnext = (cur + (x - diag[k]) * dcur - e_prev * dprev) / off[k];
            prev = cur;
            cur = next;
            dprev = dcur;
            dcur = dnext;
            if k + 1 < m {
                sum += cur * cur;
            }
        }
        (cur, dcur, sum)
    };

    // Eigenvalues locate the roots of p_m to ~eps * ||T||; polish with Newton
    // so the Christoffel weights meet the exactness invariants.
    let nodes_weights: Vec<(f64, f64)> = eig
        .par_iter()
        .map(|&x0| {
            let mut x = x0;
            for _ in 0..3 {
                let (p, dp, _) = polys(x);
                let step = p / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, _, sum) = polys(x);
            (x, 1.0 / sum)
        })
        .collect();
    let eig: Vec<f64> = nodes_weights.iter().map(|p| p.0).collect();
    let weights: Vec<f64> = nodes_weights.iter().map(|p| p.1).collect();

    // Map [-1, 1] with weight (1+x)^-alpha to [0, 1] with weight u^-alpha:
    // u = (1 + x) / 2, weights pick up the factor (1/2)^(1 - alpha).
    let nscale = 0.5;
    let wscale = 0.5f64.powf(1.0 - alpha);
    Ok(StandardRule {
        nodes: eig.iter().map(|&x| nscale * (1.0 + x)).collect(),
        weights: weights.iter().map(|&w| wscale * w).collect(),
    })
}

/// Eigenvalues of a symmetric tridiagonal matrix by the implicit-shift QL
/// algorithm (eigenvalues only).
fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0f64; n];
    e[..n - 1].copy_from_slice(off);
    if n == 1 {
        return Ok(d);
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find a negligible off-diagonal element.
            let mut m_ = l;
            while m_ < n - 1 {
                let dd = d[m_].abs() + d[m_ + 1].abs();
                if e[m_].abs() <= f64::EPSILON * dd {
                    break;
                }
                m_ += 1;
            }
            if m_ == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::invalid(
                    "tridiagonal eigenvalue iteration failed to converge",
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m_] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            for i in (l..m_).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m_] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if i == l {
                    d[l] -= p;
                    e[l] = g;
                    e[m_] = 0.0;
                }
            }
        }
    }
    Ok(d)
}
