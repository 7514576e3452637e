//! Extended-precision gamma function and generalized hypergeometric series
//! for the singular-Matern closed form.
//!
//! The two bracket terms of that formula grow like huge near-opposite
//! numbers, so the whole chain (gamma factors, both 1F2 series, the cosine,
//! and the final cancellation) runs in `BigFloat` arithmetic; a final audit
//! escalates if the working precision left too few surviving bits.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::bigfloat::{pi, BigFloat};
use crate::error::{Error, Result};

/// Spouge coefficient set for one (precision, a) pair.
struct SpougeTable {
    a: u32,
    /// Working precision of the coefficients and the series summation.
    wp: u32,
    coeffs: Vec<BigFloat>, // c_0 = sqrt(2 pi), then c_1 .. c_{a-1}
}

static SPOUGE_CACHE: RwLock<Option<HashMap<u32, Arc<SpougeTable>>>> = RwLock::new(None);

fn spouge_table(prec: u32) -> Arc<SpougeTable> {
    if let Some(map) = SPOUGE_CACHE.read().unwrap().as_ref() {
        if let Some(t) = map.get(&prec) {
            return t.clone();
        }
    }
    // Relative error ~ a^-1/2 (2 pi)^-(a + 1/2): a = ceil(bits * ln 2 / ln 2 pi)
    // plus slack keeps the approximation below one ulp at `prec` bits.
    let a = ((prec as f64 + 16.0) * std::f64::consts::LN_2 / (2.0 * std::f64::consts::PI).ln())
        .ceil() as u32
        + 2;
    // The alternating coefficients reach ~e^a before cancelling back to
    // O(1), so the series needs ~a log2(e) extra working bits.
    let wp = prec + (1.443 * a as f64).ceil() as u32 + 64;
    let two_pi = pi(wp).shl2(1);
    let mut coeffs = Vec::with_capacity(a as usize);
    // c_0 = sqrt(2 pi)
    coeffs.push(two_pi.sqrt());
    // c_k = (-1)^(k-1) / (k-1)! * (a - k)^(k - 1/2) * e^(a - k), written as
    // (a-k)^k / sqrt(a-k) so only integer powers, one square root, and an
    // incrementally updated exponential are needed per coefficient.
    let e_inv = BigFloat::from_u64(1, wp).exp().powi(-1);
    let mut expf = BigFloat::from_u64(a as u64 - 1, wp).exp(); // e^(a-1)... updated below
    let mut factorial = BigFloat::from_u64(1, wp); // (k-1)!
    for k in 1..a {
        if k > 1 {
            factorial = factorial.mul_u64((k - 1) as u64);
            expf = expf.mul(&e_inv); // e^(a-k)
        }
        let a_minus_k = BigFloat::from_u64((a - k) as u64, wp);
        let pow = a_minus_k.powi(k as i64).div(&a_minus_k.sqrt());
        let mut c = pow.mul(&expf).div(&factorial);
        if k % 2 == 0 {
            c = c.neg();
        }
        coeffs.push(c);
    }
    let table = Arc::new(SpougeTable { a, wp, coeffs });
    SPOUGE_CACHE
        .write()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert(prec, table.clone());
    table
}

/// Gamma function in extended precision via Spouge's approximation, with
/// reflection for arguments left of 1/2.
pub fn gamma_big(x: &BigFloat, prec: u32) -> Result<BigFloat> {
    let xf = x.to_f64();
    if xf <= 0.0 && (xf - xf.round()).abs() < 1e-12 {
        return Err(Error::GammaPole {
            argument: xf,
            context: "extended-precision gamma at a nonpositive integer".into(),
        });
    }
    let wp = prec + 64;
    let xw = x.with_precision(wp);
    if xf < 0.5 {
        // Gamma(x) = pi / (sin(pi x) Gamma(1 - x))
        let pw = pi(wp);
        let sinpix = pw.mul(&xw).sin();
        if sinpix.is_zero() {
            return Err(Error::GammaPole {
                argument: xf,
                context: "reflection hit sin(pi x) = 0".into(),
            });
        }
        let one_minus = BigFloat::from_u64(1, wp).sub(&xw);
        let g = gamma_big(&one_minus, prec)?;
        return Ok(pw.div(&sinpix.mul(&g)).with_precision(prec));
    }

    let table = spouge_table(prec);
    let swp = table.wp;
    // Gamma(x) = Gamma(z + 1) with z = x - 1:
    //   (z + a)^(z + 1/2) e^-(z + a) [c_0 + sum c_k / (z + k)]
    let z = x.with_precision(swp).sub(&BigFloat::from_u64(1, swp));
    let a_big = BigFloat::from_u64(table.a as u64, swp);
    let z_plus_a = z.add(&a_big);
    let mut series = table.coeffs[0].clone();
    for (k, c) in table.coeffs.iter().enumerate().skip(1) {
        let denom = z.add(&BigFloat::from_u64(k as u64, swp));
        series = series.add(&c.div(&denom));
    }
    let z_half = z.add(&BigFloat::from_f64(0.5, swp));
    let power = z_plus_a.ln().mul(&z_half).exp();
    let decay = z_plus_a.neg().exp();
    Ok(power.mul(&decay).mul(&series).with_precision(prec))
}

/// `1F2(a; b1, b2; z)` by forward series summation. Returns the sum together
/// with the largest partial-sum magnitude seen (for cancellation audits).
///
/// Parameters are taken as `BigFloat` so the term factors `(a + n)` carry no
/// double-rounding: the bracket cancellation downstream amplifies any
/// parameter-level rounding by the full size of the partial sums.
pub fn hyper_1f2_big(
    a: &BigFloat,
    b1: &BigFloat,
    b2: &BigFloat,
    z: &BigFloat,
    prec: u32,
) -> Result<(BigFloat, BigFloat)> {
    let wp = prec + 64;
    let a = a.with_precision(wp);
    let b1 = b1.with_precision(wp);
    let b2 = b2.with_precision(wp);
    let mut term = BigFloat::from_u64(1, wp);
    let mut sum = term.clone();
    let mut max_abs = sum.abs();
    // Stop once 64 consecutive terms fall below 2^-(prec - 64) * max partial sum.
    let mut quiet = 0usize;
    let zf = z.to_f64();
    let max_terms = (3.0 * zf.abs().sqrt() + prec as f64 * 4.0) as usize + 256;
    for n in 0..max_terms {
        let n_b = BigFloat::from_u64(n as u64, wp);
        let d1 = b1.add(&n_b);
        let d2 = b2.add(&n_b);
        if d1.is_zero() || d2.is_zero() {
            return Err(Error::GammaPole {
                argument: if d1.is_zero() { b1.to_f64() } else { b2.to_f64() },
                context: "1F2 lower parameter is a nonpositive integer".into(),
            });
        }
        term = term
            .mul(&a.add(&n_b))
            .mul(z)
            .div(&d1)
            .div(&d2)
            .div_u64(n as u64 + 1);
        sum = sum.add(&term);
        if sum.cmp_abs(&max_abs) == std::cmp::Ordering::Greater {
            max_abs = sum.abs();
        }
        let small = term.is_zero()
            || (!max_abs.is_zero()
                && term.exponent2() < max_abs.exponent2() - (prec as i64 - 64));
        if small {
            quiet += 1;
            if quiet >= 64 {
                return Ok((sum.with_precision(prec), max_abs.with_precision(prec)));
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::PrecisionEscalation {
        bits: prec,
        reason: format!("1F2 series did not settle within {max_terms} terms (z = {zf})"),
    })
}

/// Extended-precision evaluation of the singular-Matern covariance through
/// its hypergeometric representation; the trusted oracle for the
/// cancellation study.
pub fn singular_matern_1f2_big(
    r: f64,
    phi: f64,
    rho: f64,
    nu: f64,
    alpha: f64,
    bits: u32,
) -> Result<f64> {
    let prec = bits.clamp(128, 16_384);
    let wp = prec + 64;

    let pi_w = pi(wp);
    let r_b = BigFloat::from_f64(r, wp);
    let rho_b = BigFloat::from_f64(rho, wp);
    let two_pi_r = pi_w.mul(&r_b).shl2(1);
    let two_pi_r_rho = two_pi_r.mul(&rho_b);
    // z = (rho pi r)^2
    let z = pi_w.mul(&r_b).mul(&rho_b).powi(2);

    // Every derived parameter is composed in extended precision from the
    // exact f64 atoms; f64 pre-combination would cap the bracket at ~1e-16.
    let alpha_w = BigFloat::from_f64(alpha, wp);
    let nu_w = BigFloat::from_f64(nu, wp);
    let one = BigFloat::from_u64(1, wp);
    let two = BigFloat::from_u64(2, wp);
    let half = one.shl2(-1);
    let two_nu_w = nu_w.shl2(1);

    // F1: a = (1 - alpha)/2, b = {1/2, (2 - 2 nu - alpha)/2}
    let f1 = hyper_1f2_big(
        &one.sub(&alpha_w).shl2(-1),
        &half,
        &two.sub(&two_nu_w).sub(&alpha_w).shl2(-1),
        &z,
        prec,
    )?;
    // F2: a = (2 nu + 1)/2, b = {(1 + 2 nu + alpha)/2, (2 + 2 nu + alpha)/2}
    let f2 = hyper_1f2_big(
        &two_nu_w.add(&one).shl2(-1),
        &one.add(&two_nu_w).add(&alpha_w).shl2(-1),
        &two.add(&two_nu_w).add(&alpha_w).shl2(-1),
        &z,
        prec,
    )?;

    let gamma_nu_a2 = gamma_big(&nu_w.add(&alpha_w.shl2(-1)), prec)?;
    let gamma_1ma2 = gamma_big(&one.sub(&alpha_w).shl2(-1), prec)?;
    let gamma_nu_half = gamma_big(&nu_w.add(&half), prec)?;
    let gamma_neg = gamma_big(&alpha_w.add(&two_nu_w).neg(), prec)?;

    // T1 = (2 pi r rho)^-alpha Gamma(nu + alpha/2) Gamma((1-alpha)/2) F1
    let t1 = two_pi_r_rho
        .ln()
        .mul(&alpha_w.neg())
        .exp()
        .mul(&gamma_nu_a2)
        .mul(&gamma_1ma2)
        .mul(&f1.0);
    // T2 = 2 (2 pi r rho)^{2 nu} cos((2 nu + alpha) pi / 2) Gamma(nu + 1/2)
    //        Gamma(-alpha - 2 nu) F2
    let cos_arg = nu_w.add(&alpha_w.shl2(-1)).mul(&pi_w);
    let t2 = two_pi_r_rho
        .ln()
        .mul(&two_nu_w)
        .exp()
        .shl2(1)
        .mul(&cos_arg.cos())
        .mul(&gamma_nu_half)
        .mul(&gamma_neg)
        .mul(&f2.0);

    let bracket = t1.add(&t2);

    // Cancellation audit: the surviving magnitude must clear the round-off
    // floor of the largest intermediate, including the series' own internal
    // growth.
    let mut floor = t1.abs();
    if t2.abs().cmp_abs(&floor) == std::cmp::Ordering::Greater {
        floor = t2.abs();
    }
    for m in [&f1.1, &f2.1] {
        if m.cmp_abs(&floor) == std::cmp::Ordering::Greater {
            floor = m.clone();
        }
    }
    if !bracket.is_zero() && !floor.is_zero() {
        let surviving = bracket.exponent2() - (floor.exponent2() - prec as i64);
        if surviving < prec as i64 / 2 {
            return Err(Error::PrecisionEscalation {
                bits: prec,
                reason: format!(
                    "cancellation leaves {surviving} bits; increase the working precision"
                ),
            });
        }
    }

    // Prefactor: phi^2 (2 pi r)^alpha / (rho^(2 nu) Gamma(nu + 1/2))
    let phi2 = BigFloat::from_f64(phi, wp).powi(2);
    let pref = phi2
        .mul(&two_pi_r.ln().mul(&alpha_w).exp())
        .div(&rho_b.ln().mul(&two_nu_w).exp())
        .div(&gamma_nu_half);
    Ok(pref.mul(&bracket).to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{gamma, reference, singular_matern_1f2, Precision};

    const P: u32 = 512;

    #[test]
    fn gamma_big_matches_lanczos_and_identities() {
        for &x in &[0.3, 0.51, 1.0, 2.5, 4.2, 10.0, -1.3, -4.5] {
            let g = gamma_big(&BigFloat::from_f64(x, P), P).unwrap().to_f64();
            let want = gamma(x);
            assert!(
                (g - want).abs() <= 1e-13 * want.abs(),
                "Gamma({x}): {g} vs {want}"
            );
        }
        // Gamma(1/2)^2 = pi, checked beyond double precision.
        let half = gamma_big(&BigFloat::from_f64(0.5, P), P).unwrap();
        let diff = half.mul(&half).sub(&pi(P));
        assert!(diff.is_zero() || diff.exponent2() < -(P as i64 - 24));
        // Recurrence Gamma(x + 1) = x Gamma(x) in extended precision.
        let x = BigFloat::from_f64(3.37, P);
        let lhs = gamma_big(&x.add(&BigFloat::from_u64(1, P)), P).unwrap();
        let rhs = x.mul(&gamma_big(&x, P).unwrap());
        let rel = lhs.sub(&rhs).div(&rhs);
        assert!(rel.is_zero() || rel.exponent2() < -(P as i64 - 24));
        assert!(gamma_big(&BigFloat::from_f64(-2.0, P), P).is_err());
    }

    #[test]
    fn hyper_series_small_argument() {
        let z = BigFloat::from_f64(0.37, P);
        let (s, _) = hyper_1f2_big(
            &BigFloat::from_f64(0.35, P),
            &BigFloat::from_f64(0.5, P),
            &BigFloat::from_f64(1.25, P),
            &z,
            P,
        )
        .unwrap();
        // Compare against direct double summation (benign regime).
        let mut term = 1.0f64;
        let mut want = 1.0f64;
        for n in 0..200 {
            let nf = n as f64;
            term *= (0.35 + nf) * 0.37 / ((0.5 + nf) * (1.25 + nf) * (nf + 1.0));
            want += term;
        }
        assert!((s.to_f64() - want).abs() <= 1e-14 * want.abs());
    }

    #[test]
    fn big_matches_double_in_benign_regime() {
        // rho = 2, small r: double precision still has many digits left.
        let (phi, rho, nu, alpha) = (1.0, 2.0, 2.1, 0.3);
        for &r in &[0.1, 0.3] {
            let d = singular_matern_1f2(r, phi, rho, nu, alpha, Precision::Double).unwrap();
            let b = singular_matern_1f2_big(r, phi, rho, nu, alpha, 768).unwrap();
            assert!(
                (d - b).abs() <= 1e-9 * b.abs(),
                "r={r}: double {d} vs big {b}"
            );
        }
    }

    #[test]
    fn big_matches_brute_force_where_double_fails() {
        // rho = 10, r = 1: the double path loses everything to cancellation,
        // the extended-precision path must match quadrature.
        let (phi, rho, nu, alpha) = (1.0, 10.0, 2.1, 0.3);
        let b = singular_matern_1f2_big(1.0, phi, rho, nu, alpha, 3072).unwrap();
        let brute = reference::kernel_fourier_integral(
            &|w: f64| (rho * rho + w * w).powf(-nu - 0.5),
            alpha,
            1.0,
            rho,
            1e-12,
        )
        .unwrap();
        assert!(
            (b - brute).abs() <= 1e-9 * brute.abs(),
            "big {b} vs brute {brute}"
        );
        let d = singular_matern_1f2(1.0, phi, rho, nu, alpha, Precision::Double).unwrap();
        assert!(
            d.abs() > 1e6 * brute.abs(),
            "double path unexpectedly healthy: {d} vs {brute}"
        );
    }

    #[test]
    fn insufficient_precision_escalates() {
        // 128 bits cannot absorb the ~1e29-sized cancellation at rho = 10.
        let err = singular_matern_1f2_big(1.0, 1.0, 10.0, 2.1, 0.3, 128);
        assert!(
            matches!(err, Err(Error::PrecisionEscalation { .. })),
            "expected escalation, got {err:?}"
        );
    }
}
