//! Type-3 (nonuniform-to-nonuniform) discrete Fourier summation
//!
//! ```text
//! f_k = sum_j c_j exp(2 pi i omega_j r_k),   k = 1..n
//! ```
//!
//! evaluated either exactly by the `O(n m)` direct sum or to a requested
//! tolerance `delta` in `O(m + n + N log N)` via spreading with an
//! exponential-of-semicircle kernel, one FFT on an oversampled fine grid, and
//! kernel-transform deconvolution at the targets. A plan is immutable once
//! built and may be executed against any number of coefficient vectors with
//! the same `(omega, r)`.
//!
//! Accuracy contract: `max_k |f_k - exact_k| <= delta * sum_j |c_j|`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Problems at or below this work size are summed directly; planning a
/// transform would cost more than the sum itself.
pub const DIRECT_CUTOFF: usize = 50_000;

/// Oversampling factor of the fine grid.
const SIGMA: f64 = 2.0;

/// Round-off limits transform accuracy to about 1e-9 for large fine grids;
/// plans refuse tolerance below that wall past this grid size so callers can
/// split their batches.
const ROUNDOFF_WALL_GRID: usize = 1 << 22;

/// Hard memory guard on the fine grid.
const MAX_FINE_GRID: usize = 1 << 26;

/// Exact `O(n m)` evaluation of the exponential sum; the oracle for every
/// fast path and the preferred route for small problems.
pub fn direct_nudft(omega: &[f64], c: &[Complex64], r: &[f64]) -> Vec<Complex64> {
    assert_eq!(omega.len(), c.len(), "omega and c must have equal length");
    let one = |rk: f64| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&w, &cj) in omega.iter().zip(c) {
            let (s, co) = (2.0 * std::f64::consts::PI * w * rk).sin_cos();
            acc += cj * Complex64::new(co, s);
        }
        acc
    };
    // Thread dispatch costs more than small sums.
    if omega.len() * r.len() < 20_000 {
        r.iter().map(|&rk| one(rk)).collect()
    } else {
        r.par_iter().map(|&rk| one(rk)).collect()
    }
}

/// Precomputed type-3 transform for fixed `(omega, r, delta)`.
pub struct NuFftPlan {
    n_sources: usize,
    n_targets: usize,
    inner: PlanInner,
}

enum PlanInner {
    Direct {
        omega: Vec<f64>,
        r: Vec<f64>,
    },
    Fast(Box<FastPlan>),
}

struct FastPlan {
    /// Kernel width in fine-grid cells.
    w: usize,
    beta: f64,
    nf: usize,
    nf2: usize,
    /// Source positions in first-grid cells, in `[0, nf)`.
    source_pos: Vec<f64>,
    /// `exp(i s_c u_j)` pre-phase per source.
    source_phase: Vec<Complex64>,
    /// `exp(i s_k x_c)` post-phase per target.
    target_phase: Vec<Complex64>,
    /// Target position on the second grid, in cells, in `[0, nf2)`.
    target_pos: Vec<f64>,
    /// `(2 pi / nf) * h2 / psi1_hat(t'_k)` per target.
    target_scale: Vec<f64>,
    /// `1 / psi2_hat(n)` in FFT layout (index `n mod nf2`).
    mode_deconv: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

/// Build a type-3 plan for `f_k = sum_j c_j e^{2 pi i omega_j r_k}`.
pub fn plan_type3(omega: &[f64], r: &[f64], delta: f64) -> Result<NuFftPlan> {
    if omega.is_empty() || r.is_empty() {
        return Err(Error::invalid("plan_type3 requires nonempty source and target arrays"));
    }
    if !(delta >= 1e-15) {
        return Err(Error::UnachievableTolerance {
            requested: delta,
            fine_grid: 0,
        });
    }
    if omega.iter().chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("plan_type3 requires finite inputs"));
    }
    let m = omega.len();
    let n = r.len();

    // Angular-frequency view: f_k = sum_j c_j e^{i s_k x_j}.
    let (x_min, x_max) = min_max(omega);
    let (r_min, r_max) = min_max(r);
    let x_c = 0.5 * (x_min + x_max);
    let x_half = 0.5 * (x_max - x_min);
    let s_min = 2.0 * std::f64::consts::PI * r_min;
    let s_max = 2.0 * std::f64::consts::PI * r_max;
    let s_c = 0.5 * (s_min + s_max);
    let s_half = 0.5 * (s_max - s_min);

    let w = kernel_width(delta);
    let space_bandwidth = 2.0 * SIGMA * x_half * s_half / std::f64::consts::PI;
    let nf_needed = space_bandwidth + w as f64;

    if m * n <= DIRECT_CUTOFF || nf_needed < (8 * w) as f64 {
        return Ok(NuFftPlan {
            n_sources: m,
            n_targets: n,
            inner: PlanInner::Direct {
                omega: omega.to_vec(),
                r: r.to_vec(),
            },
        });
    }

    let nf = next_fast_even(nf_needed.ceil() as usize + 2);
    if delta < 1e-9 && nf > ROUNDOFF_WALL_GRID {
        return Err(Error::UnachievableTolerance {
            requested: delta,
            fine_grid: nf,
        });
    }
    if nf > MAX_FINE_GRID {
        return Err(Error::UnachievableTolerance {
            requested: delta,
            fine_grid: nf,
        });
    }
    let nf2 = next_fast_even(2 * nf);

    let beta = es_beta(w);
    let h = 2.0 * std::f64::consts::PI / nf as f64;
    let h2 = 2.0 * std::f64::consts::PI / nf2 as f64;
    // Rescale so sources plus kernel support stay inside one period.
    let gamma = if x_half > 0.0 {
        x_half / (std::f64::consts::PI * (1.0 - w as f64 / nf as f64))
    } else {
        1.0
    };

    // psi1_hat needs the continuous kernel transform at the scaled target
    // frequencies; psi2_hat is the same transform at uniformly spaced
    // arguments, filled by a cosine recurrence.
    let ft = EsKernelTransform::new(beta);

    let source_pos: Vec<f64> = omega
        .iter()
        .map(|&wj| ((wj - x_c) / gamma + std::f64::consts::PI) / h)
        .collect();
    let source_phase: Vec<Complex64> = omega
        .iter()
        .map(|&wj| Complex64::from_polar(1.0, s_c * (wj - x_c)))
        .collect();

    let half_support_angle1 = 0.5 * w as f64 * h;
    let mut target_pos = Vec::with_capacity(n);
    let mut target_scale = Vec::with_capacity(n);
    let mut target_phase = Vec::with_capacity(n);
    let scale0 = (2.0 * std::f64::consts::PI / nf as f64) * h2 / half_support_angle1;
    for &rk in r {
        let sk = 2.0 * std::f64::consts::PI * rk;
        let tprime = gamma * (sk - s_c);
        let phi = h * tprime; // in [-pi/sigma, pi/sigma]
        target_pos.push(phi / h2);
        // psi1_hat(t') = half_support_angle1 * K(t' * half_support_angle1)
        target_scale.push(scale0 / ft.eval(tprime * half_support_angle1));
        target_phase.push(Complex64::from_polar(1.0, sk * x_c));
    }

    let half_support_angle2 = 0.5 * w as f64 * h2;
    let kernel_ft_modes = ft.eval_uniform(half_support_angle2, nf / 2);
    let mut mode_deconv = vec![0.0f64; nf2];
    for nt in -(nf as isize / 2)..(nf as isize / 2) {
        let idx = nt.rem_euclid(nf2 as isize) as usize;
        mode_deconv[idx] = 1.0 / (half_support_angle2 * kernel_ft_modes[nt.unsigned_abs()]);
    }

    let fft = FftPlanner::new().plan_fft(nf2, FftDirection::Inverse);

    Ok(NuFftPlan {
        n_sources: m,
        n_targets: n,
        inner: PlanInner::Fast(Box::new(FastPlan {
            w,
            beta,
            nf,
            nf2,
            source_pos,
            source_phase,
            target_phase,
            target_pos,
            target_scale,
            mode_deconv,
            fft,
        })),
    })
}

impl NuFftPlan {
    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.inner, PlanInner::Direct { .. })
    }

    /// Fine-grid size, zero on the direct path.
    pub fn fine_grid(&self) -> usize {
        match &self.inner {
            PlanInner::Direct { .. } => 0,
            PlanInner::Fast(p) => p.nf2,
        }
    }

    /// Evaluate the sum for one coefficient vector.
    pub fn execute(&self, c: &[Complex64]) -> Result<Vec<Complex64>> {
        if c.len() != self.n_sources {
            return Err(Error::invalid(format!(
                "coefficient vector has length {}, plan expects {}",
                c.len(),
                self.n_sources
            )));
        }
        match &self.inner {
            PlanInner::Direct { omega, r } => Ok(direct_nudft(omega, c, r)),
            PlanInner::Fast(p) => Ok(p.execute(c)),
        }
    }

    /// Convenience wrapper for real coefficient vectors.
    pub fn execute_real(&self, c: &[f64]) -> Result<Vec<Complex64>> {
        let cc: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.execute(&cc)
    }
}

impl FastPlan {
    fn execute(&self, c: &[Complex64]) -> Vec<Complex64> {
        let half_w = 0.5 * self.w as f64;

        // Spread sources onto the first fine grid (serial: deterministic and
        // cheap relative to the FFT).
        let mut fw = vec![Complex64::new(0.0, 0.0); self.nf];
        let mut kval = vec![0.0f64; self.w + 1];
        for (j, &cj) in c.iter().enumerate() {
            if cj.re == 0.0 && cj.im == 0.0 {
                continue;
            }
            let a = self.source_pos[j];
            let cpre = cj * self.source_phase[j];
            let lo = (a - half_w).ceil() as isize;
            let hi = (a + half_w).floor() as isize;
            let mut nk = 0;
            for l in lo..=hi {
                let z = (l as f64 - a) / half_w;
                kval[nk] = es_kernel(self.beta, z);
                nk += 1;
            }
            let mut nk = 0;
            for l in lo..=hi {
                let idx = l.rem_euclid(self.nf as isize) as usize;
                fw[idx] += cpre * kval[nk];
                nk += 1;
            }
        }

        // Reinterpret grid values as trigonometric-polynomial coefficients,
        // deconvolve by the second kernel, zero-pad, and transform.
        let mut padded = vec![Complex64::new(0.0, 0.0); self.nf2];
        let half_nf = self.nf / 2;
        for nt in 0..self.nf {
            let mode = nt as isize - half_nf as isize;
            let idx = mode.rem_euclid(self.nf2 as isize) as usize;
            padded[idx] = fw[nt] * self.mode_deconv[idx];
        }
        self.fft.process(&mut padded);

        // Interpolate at targets with the second kernel and apply the
        // per-target deconvolution and phases.
        let v = &padded;
        (0..self.target_pos.len())
            .into_par_iter()
            .map(|k| {
                let p = self.target_pos[k];
                let lo = (p - half_w).ceil() as isize;
                let hi = (p + half_w).floor() as isize;
                let mut acc = Complex64::new(0.0, 0.0);
                for l in lo..=hi {
                    let z = (l as f64 - p) / half_w;
                    let idx = l.rem_euclid(self.nf2 as isize) as usize;
                    acc += v[idx] * es_kernel(self.beta, z);
                }
                acc * self.target_scale[k] * self.target_phase[k]
            })
            .collect()
    }
}

/// Width (in fine-grid cells) of the spreading kernel for tolerance `delta`.
///
/// One digit of margin beyond the nominal width-per-digit rule: coefficient
/// vectors with aligned signs (quadrature weights times a positive density)
/// realize the worst-case aliasing constant rather than its random-phase
/// average. Widths past 13 stop paying: round-off through the oversampled
/// grid then dominates the kernel truncation error.
fn kernel_width(delta: f64) -> usize {
    let w = (1.0 / delta).log10().ceil() as usize + 2;
    w.clamp(4, 13)
}

/// Exponential-of-semicircle shape parameter.
fn es_beta(w: usize) -> f64 {
    // Slightly below the asymptotic 2.30 w for the narrowest kernels.
    match w {
        4 => 2.26 * w as f64,
        _ => 2.30 * w as f64,
    }
}

/// `exp(beta (sqrt(1 - z^2) - 1))` on `[-1, 1]`, zero outside.
#[inline]
fn es_kernel(beta: f64, z: f64) -> f64 {
    let t = 1.0 - z * z;
    if t <= 0.0 {
        return 0.0;
    }
    (beta * (t.sqrt() - 1.0)).exp()
}

/// Evaluates `K(y) = int_-1^1 es(z) cos(y z) dz`, the continuous Fourier
/// transform of the unit-support kernel.
struct EsKernelTransform {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl EsKernelTransform {
    fn new(beta: f64) -> Self {
        // The integrand is even; fold onto [0, 1]. The node count covers the
        // kernel's analytic part plus oscillation up to |y| <= pi w / 4.
        let rule = gauss_legendre(40, 0.0, 1.0).expect("static rule");
        let weights: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&z, &w)| 2.0 * w * es_kernel(beta, z))
            .collect();
        EsKernelTransform {
            nodes: rule.nodes,
            weights,
        }
    }

    fn eval(&self, y: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * (y * z).cos())
            .sum()
    }

    /// `K(step * n)` for `n = 0..=count`, via a per-node cosine recurrence
    /// re-seeded periodically to hold rounding drift near machine precision.
    fn eval_uniform(&self, step: f64, count: usize) -> Vec<f64> {
        let mut out = vec![0.0f64; count + 1];
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            let a = step * z;
            let cos_a = a.cos();
            let two_cos = 2.0 * cos_a;
            let mut prev = cos_a; // plays cos((n-1) a) once n = 1
            let mut cur = 1.0; // cos(0)
            out[0] += w;
            let mut n = 1usize;
            while n <= count {
                // cos(na) = 2 cos(a) cos((n-1)a) - cos((n-2)a)
                let next = two_cos * cur - prev;
                prev = cur;
                cur = next;
                out[n] += w * cur;
                n += 1;
                if n % 1024 == 0 {
                    // Re-seed so the entering state is again exact:
                    // cur = cos((n-1)a), prev = cos((n-2)a).
                    cur = (a * (n as f64 - 1.0)).cos();
                    prev = (a * (n as f64 - 2.0)).cos();
                }
            }
        }
        out
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// Smallest even `2^a 3^b 5^c >= n`.
fn next_fast_even(n: usize) -> usize {
    let mut c = n.max(2);
    if c % 2 == 1 {
        c += 1;
    }
    loop {
        let mut x = c;
        for p in [2usize, 3, 5] {
            while x % p == 0 {
                x /= p;
            }
        }
        if x == 1 {
            return c;
        }
        c += 2;
    }
}
