//! Arbitrary-precision binary floating point, sufficient for the
//! hypergeometric singular-Matern oracle: `+ - * /`, powers, `exp`, `log`,
//! `cos`, `sin`, and `pi`, at a configurable mantissa width.
//!
//! Values are `sign * mant * 2^exp` with the mantissa normalized to exactly
//! `prec` bits; arithmetic rounds to nearest (ties to even), so results are
//! correct to within one unit in the last place. Exactly representable
//! doubles round-trip exactly.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_bigint::BigUint;

/// Default mantissa width in bits.
pub const DEFAULT_PRECISION: u32 = 3072;

/// Guard bits used inside transcendental evaluations.
const GUARD: u32 = 64;

#[derive(Clone, Debug)]
pub struct BigFloat {
    sign: i8,
    mant: BigUint,
    /// Value = sign * mant * 2^exp.
    exp: i64,
    prec: u32,
}

impl BigFloat {
    pub fn zero(prec: u32) -> Self {
        BigFloat {
            sign: 0,
            mant: BigUint::default(),
            exp: 0,
            prec,
        }
    }

    pub fn from_u64(v: u64, prec: u32) -> Self {
        let mut x = BigFloat {
            sign: if v == 0 { 0 } else { 1 },
            mant: BigUint::from(v),
            exp: 0,
            prec,
        };
        x.normalize();
        x
    }

    pub fn from_i64(v: i64, prec: u32) -> Self {
        let mut x = Self::from_u64(v.unsigned_abs(), prec);
        if v < 0 {
            x.sign = -x.sign;
        }
        x
    }

    pub fn from_f64(v: f64, prec: u32) -> Self {
        assert!(v.is_finite(), "BigFloat::from_f64 requires a finite value");
        if v == 0.0 {
            return Self::zero(prec);
        }
        let bits = v.to_bits();
        let sign = if bits >> 63 == 1 { -1i8 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if biased == 0 {
            (frac, -1074i64) // subnormal
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        let mut x = BigFloat {
            sign,
            mant: BigUint::from(mant),
            exp,
            prec,
        };
        x.normalize();
        x
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn is_negative(&self) -> bool {
        self.sign < 0
    }

    /// Base-2 exponent of the leading bit (value in [2^e, 2^(e+1))).
    pub fn exponent2(&self) -> i64 {
        debug_assert!(!self.is_zero());
        self.exp + self.prec as i64 - 1
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        // Normalized fraction in [1, 2) from the top 64 bits, then scale by
        // the binary exponent in two steps so the subnormal range degrades
        // gracefully instead of flushing to zero.
        let nbits = self.mant.bits() as i64;
        let shift = nbits - 64;
        let top: u64 = if shift > 0 {
            let t: BigUint = &self.mant >> (shift as u64);
            t.iter_u64_digits().next().unwrap_or(0)
        } else {
            self.mant.iter_u64_digits().next().unwrap_or(0) << (-shift) as u64
        };
        let frac = top as f64 * 2f64.powi(-63); // in [1, 2)
        let e2 = self.exponent2();
        if e2 > 1030 {
            return self.sign as f64 * f64::INFINITY;
        }
        if e2 < -1080 {
            return 0.0;
        }
        let head = e2.clamp(-1000, 1000) as i32;
        let tail = (e2 - head as i64) as i32;
        self.sign as f64 * frac * 2f64.powi(head) * 2f64.powi(tail)
    }

    /// Normalize the mantissa to exactly `prec` bits, rounding to nearest
    /// (ties to even).
    fn normalize(&mut self) {
        if self.mant == BigUint::default() {
            self.sign = 0;
            self.exp = 0;
            return;
        }
        let nbits = self.mant.bits() as i64;
        let target = self.prec as i64;
        if nbits > target {
            let drop = (nbits - target) as u64;
            let kept: BigUint = &self.mant >> drop;
            let round_bit = ((&self.mant >> (drop - 1)) & BigUint::from(1u8)) == BigUint::from(1u8);
            let sticky = if drop > 1 {
                (&self.mant & ((BigUint::from(1u8) << (drop - 1)) - BigUint::from(1u8)))
                    != BigUint::default()
            } else {
                false
            };
            let kept_odd = (&kept & BigUint::from(1u8)) == BigUint::from(1u8);
            let mut kept = kept;
            if round_bit && (sticky || kept_odd) {
                kept += BigUint::from(1u8);
            }
            self.mant = kept;
            self.exp += drop as i64;
            // Rounding may carry into a new bit.
            if self.mant.bits() as i64 > target {
                self.mant >>= 1u8;
                self.exp += 1;
            }
        } else if nbits < target {
            let up = (target - nbits) as u64;
            self.mant <<= up;
            self.exp -= up as i64;
        }
    }

    pub fn neg(&self) -> Self {
        let mut x = self.clone();
        x.sign = -x.sign;
        x
    }

    pub fn abs(&self) -> Self {
        let mut x = self.clone();
        if x.sign != 0 {
            x.sign = 1;
        }
        x
    }

    /// Multiply by 2^k.
    pub fn shl2(&self, k: i64) -> Self {
        let mut x = self.clone();
        if !x.is_zero() {
            x.exp += k;
        }
        x
    }

    /// Round to a (usually lower) precision.
    pub fn with_precision(&self, prec: u32) -> Self {
        let mut x = self.clone();
        x.prec = prec;
        x.normalize();
        x
    }

    /// Compare magnitudes.
    pub fn cmp_abs(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        if self.is_zero() {
            return if other.is_zero() { Ordering::Equal } else { Ordering::Less };
        }
        if other.is_zero() {
            return Ordering::Greater;
        }
        match self.exponent2().cmp(&other.exponent2()) {
            Ordering::Equal => {
                // Same leading position; compare aligned mantissas.
                let ea = self.exp;
                let eb = other.exp;
                if ea == eb {
                    self.mant.cmp(&other.mant)
                } else if ea > eb {
                    (&self.mant << (ea - eb) as u64).cmp(&other.mant)
                } else {
                    self.mant.cmp(&(&other.mant << (eb - ea) as u64))
                }
            }
            ord => ord,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let prec = self.prec.max(other.prec);
        // If the operands are too far apart, the smaller is absorbed.
        let gap = self.exponent2() - other.exponent2();
        if gap > prec as i64 + 2 {
            return self.clone();
        }
        if -gap > prec as i64 + 2 {
            return other.clone();
        }
        let (hi, lo) = if self.exp >= other.exp {
            (self, other)
        } else {
            (other, self)
        };
        let shift = (hi.exp - lo.exp) as u64;
        let hi_m = &hi.mant << shift;
        let mut out = BigFloat::zero(prec);
        out.exp = lo.exp;
        if hi.sign == lo.sign {
            out.mant = hi_m + &lo.mant;
            out.sign = hi.sign;
        } else {
            match hi_m.cmp(&lo.mant) {
                std::cmp::Ordering::Equal => return BigFloat::zero(prec),
                std::cmp::Ordering::Greater => {
                    out.mant = hi_m - &lo.mant;
                    out.sign = hi.sign;
                }
                std::cmp::Ordering::Less => {
                    out.mant = &lo.mant - hi_m;
                    out.sign = lo.sign;
                }
            }
        }
        out.normalize();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        if self.is_zero() || other.is_zero() {
            return BigFloat::zero(prec);
        }
        let mut out = BigFloat {
            sign: self.sign * other.sign,
            mant: &self.mant * &other.mant,
            exp: self.exp + other.exp,
            prec,
        };
        out.normalize();
        out
    }

    pub fn div(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        assert!(!other.is_zero(), "BigFloat division by zero");
        if self.is_zero() {
            return BigFloat::zero(prec);
        }
        let extra = prec as u64 + 3;
        let num = &self.mant << extra;
        let q = num / &other.mant;
        let mut out = BigFloat {
            sign: self.sign * other.sign,
            mant: q,
            exp: self.exp - other.exp - extra as i64,
            prec,
        };
        out.normalize();
        out
    }

    pub fn mul_u64(&self, v: u64) -> Self {
        self.mul(&BigFloat::from_u64(v, self.prec))
    }

    pub fn div_u64(&self, v: u64) -> Self {
        assert!(v != 0);
        if self.is_zero() {
            return self.clone();
        }
        let extra = 64u64;
        let num = &self.mant << extra;
        let q = num / BigUint::from(v);
        let mut out = BigFloat {
            sign: self.sign,
            mant: q,
            exp: self.exp - extra as i64,
            prec: self.prec,
        };
        out.normalize();
        out
    }

    /// Integer power by repeated squaring.
    pub fn powi(&self, mut n: i64) -> Self {
        let prec = self.prec;
        if n == 0 {
            return BigFloat::from_u64(1, prec);
        }
        let invert = n < 0;
        n = n.abs();
        let mut base = self.clone();
        let mut acc = BigFloat::from_u64(1, prec);
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            n >>= 1;
        }
        if invert {
            BigFloat::from_u64(1, prec).div(&acc)
        } else {
            acc
        }
    }

    /// Real power `self^y = exp(y ln self)`; requires `self > 0`.
    pub fn powf(&self, y: &Self) -> Self {
        assert!(self.sign > 0, "powf requires a positive base");
        y.mul(&self.ln()).exp()
    }

    /// Square root by Newton iteration on the inverse square root (uses only
    /// multiplications); requires `self >= 0`.
    pub fn sqrt(&self) -> Self {
        assert!(self.sign >= 0, "sqrt requires a nonnegative argument");
        if self.is_zero() {
            return self.clone();
        }
        let prec = self.prec;
        let wp = prec + GUARD;
        let x = self.with_precision(wp);
        // Scale into [1, 4) by an even power of two so the f64 seed is exact
        // enough and the result scales back by 2^(e/2).
        let e2 = x.exponent2();
        let shift = if e2 % 2 == 0 { e2 } else { e2 - 1 };
        let y = x.shl2(-shift);
        let seed = 1.0 / y.to_f64().sqrt();
        let mut inv = BigFloat::from_f64(seed, wp);
        let three = BigFloat::from_u64(3, wp);
        // y_{n+1} = y (3 - a y^2) / 2, doubling correct bits each step.
        let steps = (wp as f64 / 50.0).log2().ceil() as usize + 2;
        for _ in 0..steps.max(3) {
            let ay2 = y.mul(&inv).mul(&inv);
            inv = inv.mul(&three.sub(&ay2)).shl2(-1);
        }
        y.mul(&inv).shl2(shift / 2).with_precision(prec)
    }

    /// Natural logarithm; requires `self > 0`.
    pub fn ln(&self) -> Self {
        assert!(self.sign > 0, "ln requires a positive argument");
        let prec = self.prec;
        let wp = prec + GUARD;
        // Normalize to y in [1, 2): self = y * 2^e.
        let e = self.exponent2();
        let mut y = self.clone();
        y.prec = wp;
        y.normalize();
        y = y.shl2(-e);
        // ln y = 2 atanh((y - 1)/(y + 1)), argument in [0, 1/3).
        let one = BigFloat::from_u64(1, wp);
        let z = y.sub(&one).div(&y.add(&one));
        let z2 = z.mul(&z);
        let mut term = z.clone();
        let mut sum = z.clone();
        let mut k = 1u64;
        loop {
            term = term.mul(&z2);
            k += 2;
            let add = term.div_u64(k);
            if add.is_zero() || add.exponent2() < sum.exponent2() - wp as i64 {
                break;
            }
            sum = sum.add(&add);
        }
        let mut out = sum.shl2(1).add(&ln2(wp).mul(&BigFloat::from_i64(e, wp)));
        out.prec = prec;
        out.normalize();
        out
    }

    /// Exponential function.
    pub fn exp(&self) -> Self {
        let prec = self.prec;
        let wp = prec + GUARD;
        if self.is_zero() {
            return BigFloat::from_u64(1, prec);
        }
        // Range check: exp of anything past 2^40 over/underflows any use here.
        let mag = self.exponent2();
        assert!(mag < 40, "BigFloat::exp argument too large");
        let ln2_wp = ln2(wp);
        let mut x = self.clone();
        x.prec = wp;
        x.normalize();
        // x = k ln2 + s with |s| <= ln2/2.
        let k_f = x.div(&ln2_wp).to_f64().round();
        let k = k_f as i64;
        let s = x.sub(&ln2_wp.mul(&BigFloat::from_i64(k, wp)));
        // Scale down so the Taylor series converges fast.
        const J: i64 = 32;
        let small = s.shl2(-J);
        let one = BigFloat::from_u64(1, wp);
        let mut term = one.clone();
        let mut sum = one.clone();
        let mut n = 1u64;
        loop {
            term = term.mul(&small).div_u64(n);
            if term.is_zero() || term.exponent2() < sum.exponent2() - wp as i64 {
                break;
            }
            sum = sum.add(&term);
            n += 1;
        }
        // Undo the scaling: square J times.
        let mut out = sum;
        for _ in 0..J {
            out = out.mul(&out);
        }
        out = out.shl2(k);
        out.prec = prec;
        out.normalize();
        out
    }

    /// Cosine with argument reduction modulo 2 pi.
    pub fn cos(&self) -> Self {
        self.cos_sin(true)
    }

    /// Sine with argument reduction modulo 2 pi.
    pub fn sin(&self) -> Self {
        self.cos_sin(false)
    }

    fn cos_sin(&self, want_cos: bool) -> Self {
        let prec = self.prec;
        let wp = prec + GUARD + 32;
        let mut x = self.clone();
        x.prec = wp;
        x.normalize();
        if !x.is_zero() {
            assert!(
                x.exponent2() < 40,
                "BigFloat::cos/sin argument too large for reliable reduction"
            );
        }
        // Reduce modulo 2 pi.
        let two_pi = pi(wp).shl2(1);
        let k = (x.div(&two_pi).to_f64()).round() as i64;
        let t = x.sub(&two_pi.mul(&BigFloat::from_i64(k, wp)));

        // Halve J times, evaluate both series, then rebuild with the
        // double-angle formulas.
        const J: usize = 24;
        let small = t.shl2(-(J as i64));
        let one = BigFloat::from_u64(1, wp);
        // cos series
        let s2 = small.mul(&small);
        let mut term = one.clone();
        let mut cosv = one.clone();
        let mut n = 0u64;
        loop {
            term = term.mul(&s2).div_u64((2 * n + 1) * (2 * n + 2)).neg();
            if term.is_zero() || term.exponent2() < cosv.exponent2() - wp as i64 {
                break;
            }
            cosv = cosv.add(&term);
            n += 1;
        }
        // sin series
        let mut term = small.clone();
        let mut sinv = small.clone();
        let mut n = 1u64;
        loop {
            term = term.mul(&s2).div_u64((2 * n) * (2 * n + 1)).neg();
            if term.is_zero()
                || sinv.is_zero()
                || term.exponent2() < sinv.exponent2() - wp as i64
            {
                break;
            }
            sinv = sinv.add(&term);
            n += 1;
        }
        // Double the angle J times: cos 2t = 2 cos^2 - 1, sin 2t = 2 sin cos.
        let mut c = cosv;
        let mut s = sinv;
        for _ in 0..J {
            let c2 = c.mul(&c).shl2(1).sub(&one);
            let s2m = s.mul(&c).shl2(1);
            c = c2;
            s = s2m;
        }
        let mut out = if want_cos { c } else { s };
        out.prec = prec;
        out.normalize();
        out
    }
}

// ---------------------------------------------------------------------------
// Cached constants
// ---------------------------------------------------------------------------

static LN2_CACHE: RwLock<Option<HashMap<u32, Arc<BigFloat>>>> = RwLock::new(None);
static PI_CACHE: RwLock<Option<HashMap<u32, Arc<BigFloat>>>> = RwLock::new(None);

/// `ln 2 = 2 atanh(1/3)`.
pub fn ln2(prec: u32) -> BigFloat {
    if let Some(map) = LN2_CACHE.read().unwrap().as_ref() {
        if let Some(v) = map.get(&prec) {
            return (**v).clone();
        }
    }
    let wp = prec + GUARD;
    let third = BigFloat::from_u64(1, wp).div_u64(3);
    let z2 = third.mul(&third);
    let mut term = third.clone();
    let mut sum = third;
    let mut k = 1u64;
    loop {
        term = term.mul(&z2);
        k += 2;
        let add = term.div_u64(k);
        if add.is_zero() || add.exponent2() < sum.exponent2() - wp as i64 {
            break;
        }
        sum = sum.add(&add);
    }
    let mut out = sum.shl2(1);
    out.prec = prec;
    out.normalize();
    LN2_CACHE
        .write()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert(prec, Arc::new(out.clone()));
    out
}

/// Machin's formula: `pi = 16 atan(1/5) - 4 atan(1/239)`.
pub fn pi(prec: u32) -> BigFloat {
    if let Some(map) = PI_CACHE.read().unwrap().as_ref() {
        if let Some(v) = map.get(&prec) {
            return (**v).clone();
        }
    }
    let wp = prec + GUARD;
    let atan_inv = |q: u64| -> BigFloat {
        // atan(1/q) = sum (-1)^k / ((2k+1) q^(2k+1))
        let inv = BigFloat::from_u64(1, wp).div_u64(q);
        let inv2 = inv.mul(&inv);
        let mut term = inv.clone();
        let mut sum = inv;
        let mut k = 1u64;
        loop {
            term = term.mul(&inv2).neg();
            let add = term.div_u64(2 * k + 1);
            if add.is_zero() || add.exponent2() < sum.exponent2() - wp as i64 {
                break;
            }
            sum = sum.add(&add);
            k += 1;
        }
        sum
    };
    let mut out = atan_inv(5)
        .shl2(4)
        .sub(&atan_inv(239).shl2(2));
    out.prec = prec;
    out.normalize();
    PI_CACHE
        .write()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert(prec, Arc::new(out.clone()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 256;

    fn close_f64(a: f64, b: f64, ulps: f64) {
        assert!(
            (a - b).abs() <= ulps * f64::EPSILON * b.abs().max(1.0),
            "{a} vs {b}"
        );
    }

    #[test]
    fn double_round_trip_is_exact() {
        for &v in &[0.0, 1.0, -1.5, 0.1, 1e-300, 123456789.125, f64::MIN_POSITIVE] {
            assert_eq!(BigFloat::from_f64(v, P).to_f64(), v, "round trip of {v}");
        }
    }

    #[test]
    fn field_identities() {
        let a = BigFloat::from_f64(1.7e10, P);
        let b = BigFloat::from_f64(-3.1e-7, P);
        close_f64(a.add(&b).sub(&b).to_f64(), a.to_f64(), 2.0);
        close_f64(a.mul(&b).div(&b).to_f64(), a.to_f64(), 2.0);
        let twelve = BigFloat::from_u64(3, P).mul_u64(4);
        assert_eq!(twelve.to_f64(), 12.0);
        assert_eq!(twelve.powi(2).to_f64(), 144.0);
        assert_eq!(BigFloat::from_f64(2.0, P).powi(-2).to_f64(), 0.25);
    }

    #[test]
    fn cancellation_is_exact_in_extended_precision() {
        // (1 + 2^-200) - 1 = 2^-200 survives at 256 bits.
        let one = BigFloat::from_u64(1, P);
        let tiny = BigFloat::from_u64(1, P).shl2(-200);
        let diff = one.add(&tiny).sub(&one);
        assert_eq!(diff.to_f64(), 2f64.powi(-200));
    }

    #[test]
    fn pi_and_trig() {
        let p = pi(P);
        close_f64(p.to_f64(), std::f64::consts::PI, 1.0);
        // sin(pi) vanishes to working precision.
        let s = p.sin();
        assert!(s.is_zero() || s.exponent2() < -(P as i64 - 8), "sin(pi) = {}", s.to_f64());
        // cos(pi/3) = 1/2 to working precision.
        let c = p.div_u64(3).cos();
        let err = c.sub(&BigFloat::from_f64(0.5, P));
        assert!(
            err.is_zero() || err.exponent2() < -(P as i64 - 8),
            "cos(pi/3) = {}",
            c.to_f64()
        );
    }

    #[test]
    fn exp_and_ln() {
        let x = BigFloat::from_f64(3.7, P);
        close_f64(x.exp().to_f64(), 3.7f64.exp(), 4.0);
        close_f64(x.ln().to_f64(), 3.7f64.ln(), 4.0);
        // ln(exp(x)) = x beyond double precision.
        let back = x.exp().ln().sub(&x);
        assert!(back.is_zero() || back.exponent2() < -(P as i64 - 12));
        // exp(x + y) = exp(x) exp(y).
        let y = BigFloat::from_f64(-1.3, P);
        let lhs = x.add(&y).exp();
        let rhs = x.exp().mul(&y.exp());
        let rel = lhs.sub(&rhs).div(&rhs);
        assert!(rel.is_zero() || rel.exponent2() < -(P as i64 - 12));
    }

    #[test]
    fn powf_matches_double() {
        let x = BigFloat::from_f64(2.3, P);
        let y = BigFloat::from_f64(1.7, P);
        close_f64(x.powf(&y).to_f64(), 2.3f64.powf(1.7), 8.0);
    }

    #[test]
    fn ln2_value() {
        close_f64(ln2(P).to_f64(), std::f64::consts::LN_2, 1.0);
    }
}
