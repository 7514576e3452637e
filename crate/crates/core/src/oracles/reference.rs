//! Brute-force reference integration, independent of the panel/NUFFT engine.
//!
//! These routines favor robustness over speed: adaptive Gauss-Legendre with
//! rule doubling for finite intervals, a graded substitution for the
//! `omega^-alpha` endpoint, and Euler-accelerated summation over cosine
//! half-periods for oscillatory tails.

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Adaptive Gauss-Legendre integration of `f` on `[a, b]`: 15/30-point rule
/// doubling with dyadic bisection until the doubling difference is below
/// `tol` (absolute, distributed across subintervals).
pub fn adaptive_gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            // Interval has collapsed to adjacent floats.
            return Ok(0.0);
        }
        let lo = gauss_legendre(15, a, b).expect("static rule");
        let hi = gauss_legendre(30, a, b).expect("static rule");
        let v_lo = lo.apply(f);
        let v_hi = hi.apply(f);
        // Accept on the requested budget, or once the doubling difference is
        // at the rounding floor of the local mass.
        let v_abs = hi.apply(&|x| f(x).abs());
        if (v_hi - v_lo).abs() <= tol + 1e-15 * v_abs {
            return Ok(v_hi);
        }
        if depth == 0 {
            return Err(Error::RefinementFailure { a, b, depth: 60 });
        }
        Ok(recurse(f, a, mid, 0.5 * tol, depth - 1)? + recurse(f, mid, b, 0.5 * tol, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    recurse(f, a, b, tol, 60)
}

/// `int_0^b omega^-alpha g(omega) d omega` with `0 <= alpha < 1` via the
/// graded substitution `omega = u^(1/(1-alpha))`, which removes the endpoint
/// singularity exactly.
pub fn graded_singular_integral(
    g: &dyn Fn(f64) -> f64,
    alpha: f64,
    b: f64,
    tol: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if alpha == 0.0 {
        return adaptive_gl(g, 0.0, b, tol);
    }
    let p = 1.0 / (1.0 - alpha);
    let transformed = move |u: f64| g(u.powf(p)) * p;
    adaptive_gl(&transformed, 0.0, b.powf(1.0 - alpha), tol)
}

/// `int_b^inf env(omega) cos(2 pi omega r) d omega` for `r > 0` and a
/// smooth, eventually monotone envelope decaying to zero.
///
/// Integrates exactly between consecutive cosine zeros, then applies an
/// Euler transformation to the alternating series of half-period
/// contributions.
pub fn oscillatory_cosine_tail(
    env: &dyn Fn(f64) -> f64,
    b: f64,
    r: f64,
    tol: f64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::invalid("oscillatory_cosine_tail requires r > 0"));
    }
    let f = |w: f64| env(w) * (2.0 * std::f64::consts::PI * w * r).cos();
    let half_period = 1.0 / (4.0 * r);
    // First cosine zero at or after b: 2 pi w r = pi/2 + k pi.
    let k0 = ((4.0 * b * r - 1.0) / 2.0).ceil().max(0.0);
    let z0 = (2.0 * k0 + 1.0) / (4.0 * r);
    let mut head = 0.0;
    if z0 > b {
        head = adaptive_gl(&f, b, z0, tol * 0.25)?;
    }

    // Half-period contributions form an alternating series; Euler-transform
    // the partial sums for slowly decaying envelopes.
    let rule = gauss_legendre(24, 0.0, 1.0).expect("static rule");
    let segment = |j: usize| -> f64 {
        let lo = z0 + j as f64 * 2.0 * half_period;
        let hi = lo + 2.0 * half_period;
        let scale = hi - lo;
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| scale * w * f(lo + scale * x))
            .sum()
    };

    const MAX_TERMS: usize = 4000;
    let mut euler: Vec<f64> = Vec::new();
    let mut partial = 0.0;
    let mut best = f64::NAN;
    let mut stable = 0usize;
    for j in 0..MAX_TERMS {
        partial += segment(j);
        // Averaged-partial-sum table: euler[k] is the k-fold average.
        let mut carry = partial;
        for e in euler.iter_mut() {
            let avg = 0.5 * (*e + carry);
            *e = carry;
            carry = avg;
        }
        euler.push(carry);
        if euler.len() > 40 {
            euler.remove(0);
        }
        let estimate = *euler.last().unwrap();
        if j > 4 && (estimate - best).abs() <= tol * 0.1 {
            stable += 1;
            if stable >= 3 {
                return Ok(head + estimate);
            }
        } else {
            stable = 0;
        }
        best = estimate;
    }
    Err(Error::Divergent(format!(
        "oscillatory tail failed to converge from b={b} at r={r}"
    )))
}

/// `int_b^inf c omega^-beta cos(2 pi omega r) d omega` to accuracy `tol`;
/// the oracle for the truncation-bound theorem.
pub fn power_law_tail_integral(c: f64, beta: f64, b: f64, r: f64, tol: f64) -> Result<f64> {
    if beta <= 1.0 {
        return Err(Error::NonIntegrableTail { beta });
    }
    if r == 0.0 {
        return Ok(c * b.powf(1.0 - beta) / (beta - 1.0));
    }
    let env = move |w: f64| c * w.powf(-beta);
    oscillatory_cosine_tail(&env, b, r, tol)
}

/// Brute-force `K(r) = 2 int_0^inf omega^-alpha S_reg(omega) cos(2 pi omega r) d omega`
/// for a positive regular factor with an eventually monotone decaying tail.
///
/// `knee` indicates the frequency scale where `S_reg` stops varying quickly
/// (the Matern `rho`, say); integration is exact-adaptive out to a multiple
/// of both the knee and the first cosine periods, then Euler-accelerated.
pub fn kernel_fourier_integral(
    s_reg: &dyn Fn(f64) -> f64,
    alpha: f64,
    r: f64,
    knee: f64,
    tol: f64,
) -> Result<f64> {
    let r = r.abs();
    let f_full = move |w: f64| {
        let s = s_reg(w);
        if alpha == 0.0 {
            s
        } else {
            w.powf(-alpha) * s
        }
    };

    if r == 0.0 {
        // Non-oscillatory: graded origin + decade panels until the envelope
        // integral is exhausted.
        let b0 = knee.max(1.0);
        let mut total = graded_singular_integral(&|w| s_reg(w), alpha, b0, tol * 0.1)?;
        let mut lo = b0;
        for _ in 0..64 {
            let hi = lo * 4.0;
            let piece = adaptive_gl(&f_full, lo, hi, tol * 0.02)?;
            total += piece;
            lo = hi;
            if piece.abs() < tol * 0.05 && lo > 1e4 * b0 {
                break;
            }
        }
        return Ok(2.0 * total);
    }

    let quarter = 1.0 / (4.0 * r);
    // Origin cell: up to the first cosine zero or the knee, whichever is
    // smaller, with the singularity graded away.
    let b0 = quarter.min(knee.max(0.5));
    let g = move |w: f64| s_reg(w) * (2.0 * std::f64::consts::PI * w * r).cos();
    let mut total = graded_singular_integral(&g, alpha, b0, tol * 0.1)?;

    // Adaptive mid-section out to where the envelope is safely monotone.
    let b1 = (8.0 * knee.max(1.0)).max(b0 * 4.0);
    if b1 > b0 {
        let f_osc = |w: f64| f_full(w) * (2.0 * std::f64::consts::PI * w * r).cos();
        total += adaptive_gl(&f_osc, b0, b1, tol * 0.1)?;
    }
    total += oscillatory_cosine_tail(&f_full, b1, r, tol * 0.5)?;
    Ok(2.0 * total)
}

/// Brute-force Matern kernel, used to pin the closed form's constant.
pub fn matern_kernel_brute_force(r: f64, phi: f64, rho: f64, nu: f64, tol: f64) -> Result<f64> {
    let p2 = phi * phi;
    let r2 = rho * rho;
    kernel_fourier_integral(&move |w: f64| p2 * (r2 + w * w).powf(-nu - 0.5), 0.0, r, rho, tol)
}
