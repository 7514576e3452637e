//! Parametric spectral densities, their gradients, and tail laws.
//!
//! Every model describes an even, positive, integrable spectral density
//! written as `S(omega) = omega^-alpha * S_reg(omega)` with singularity
//! exponent `alpha in [0, 1)` and a regular factor `S_reg` that is finite at
//! the origin. The engine samples `S_reg` on origin panels (whose Gauss-Jacobi
//! weights absorb `omega^-alpha`) and the full `S` elsewhere.

use std::fmt;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Asymptotic power law `S(omega) ~ c * omega^-beta` for the spectral tail.
///
/// The constant is stored as `ln c`: least-squares fits to
/// faster-than-polynomial tails can produce intercepts far outside the
/// representable range of `c` itself while the implied bounds remain tiny.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailLaw {
    pub ln_c: f64,
    pub beta: f64,
    /// Frequency beyond which the law is considered valid.
    pub omega_min: f64,
}

impl TailLaw {
    pub fn new(c: f64, beta: f64, omega_min: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("tail constant must be positive, got {c}")));
        }
        Self::from_ln_c(c.ln(), beta, omega_min)
    }

    pub fn from_ln_c(ln_c: f64, beta: f64, omega_min: f64) -> Result<Self> {
        if beta <= 1.0 {
            return Err(Error::NonIntegrableTail { beta });
        }
        if !ln_c.is_finite() {
            return Err(Error::invalid(format!("tail constant ln(c) = {ln_c} is not finite")));
        }
        Ok(TailLaw { ln_c, beta, omega_min })
    }

    /// The tail constant itself; may overflow to infinity for fitted laws
    /// with extreme intercepts, in which case `ln_c` stays authoritative.
    pub fn c(&self) -> f64 {
        self.ln_c.exp()
    }
}

/// Callbacks for a user-supplied spectral density.
///
/// `density` evaluates the *regular* factor `S_reg(omega) = omega^alpha * S(omega)`
/// given `(omega, params)`; the singular factor is applied by the library.
/// Missing gradients fall back to central finite differences, and a missing
/// tail law falls back to a log-log least-squares fit near the integration
/// frontier.
#[derive(Clone)]
pub struct UserModel {
    pub name: String,
    pub params: Vec<f64>,
    pub param_names: Vec<String>,
    pub alpha: f64,
    pub density: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub gradient: Option<Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>>,
    pub tail: Option<TailLaw>,
}

impl fmt::Debug for UserModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("alpha", &self.alpha)
            .finish()
    }
}

/// A parametric spectral density from the catalog, or a user-defined one.
#[derive(Debug, Clone)]
pub enum SpectralModel {
    /// `phi^2 (rho^2 + omega^2)^(-nu - 1/2)`
    Matern { phi: f64, rho: f64, nu: f64 },
    /// `phi^2 |omega|^-alpha (rho^2 + omega^2)^(-nu - 1/2)`
    SingularMatern { phi: f64, rho: f64, nu: f64, alpha: f64 },
    /// `phi^2 (lambda + (1 - lambda)|omega|^gamma)(rho^2 + |omega|^tau)^(-nu - 1/2)`
    GeneralizedMatern {
        phi: f64,
        lambda: f64,
        gamma: f64,
        rho: f64,
        tau: f64,
        nu: f64,
    },
    /// `phi^2 (rho^2 + omega^2)^(-nu - 1/2) (1 - exp(-lambda |omega|) sin(gamma |omega|))`
    OscillatoryMatern {
        phi: f64,
        rho: f64,
        nu: f64,
        lambda: f64,
        gamma: f64,
    },
    /// `phi^2 |omega|^-alpha exp(-lambda |omega| + sum_k c_k T_k((|omega| - rho)/(|omega| + rho)))`
    ChebyshevExponential {
        phi: f64,
        alpha: f64,
        lambda: f64,
        rho: f64,
        coeffs: Vec<f64>,
    },
    /// `phi^2 |omega|^-alpha exp(-|omega|)`; exercises the closed-form tail
    /// decay law in tests and validation.
    ExponentialTest { phi: f64, alpha: f64 },
    UserDefined(UserModel),
}

use SpectralModel::*;

impl SpectralModel {
    pub fn matern(phi: f64, rho: f64, nu: f64) -> Result<Self> {
        let m = Matern { phi, rho, nu };
        m.validate()?;
        Ok(m)
    }

    pub fn singular_matern(phi: f64, rho: f64, nu: f64, alpha: f64) -> Result<Self> {
        let m = SingularMatern { phi, rho, nu, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn generalized_matern(
        phi: f64,
        lambda: f64,
        gamma: f64,
        rho: f64,
        tau: f64,
        nu: f64,
    ) -> Result<Self> {
        let m = GeneralizedMatern {
            phi,
            lambda,
            gamma,
            rho,
            tau,
            nu,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn oscillatory_matern(phi: f64, rho: f64, nu: f64, lambda: f64, gamma: f64) -> Result<Self> {
        let m = OscillatoryMatern {
            phi,
            rho,
            nu,
            lambda,
            gamma,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn chebyshev_exponential(
        phi: f64,
        alpha: f64,
        lambda: f64,
        rho: f64,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        let m = ChebyshevExponential {
            phi,
            alpha,
            lambda,
            rho,
            coeffs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential_test(phi: f64, alpha: f64) -> Result<Self> {
        let m = ExponentialTest { phi, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn user_defined(user: UserModel) -> Result<Self> {
        let m = UserDefined(user);
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let check_pos = |v: f64, name: &str| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
            Ok(())
        };
        let check_alpha = |a: f64| -> Result<()> {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::invalid(format!(
                    "alpha must satisfy 0 <= alpha < 1, got {a}"
                )));
            }
            Ok(())
        };
        match self {
            Matern { phi, rho, nu } => {
                check_pos(*phi, "phi")?;
                check_pos(*rho, "rho")?;
                check_pos(*nu, "nu")
            }
            SingularMatern { phi, rho, nu, alpha } => {
                check_pos(*phi, "phi")?;
                check_pos(*rho, "rho")?;
                check_pos(*nu, "nu")?;
                check_alpha(*alpha)
            }
            GeneralizedMatern {
                phi,
                lambda,
                gamma,
                rho,
                tau,
                nu,
            } => {
                check_pos(*phi, "phi")?;
                check_pos(*rho, "rho")?;
                check_pos(*nu, "nu")?;
                if !(0.0..=1.0).contains(lambda) {
                    return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
                }
                if !(*tau > 0.0 && *tau <= 2.0) {
                    return Err(Error::invalid(format!("tau must lie in (0, 2], got {tau}")));
                }
                if *gamma < 0.0 {
                    return Err(Error::invalid(format!("gamma must be nonnegative, got {gamma}")));
                }
                if tau * (nu + 0.5) - gamma <= 1.0 {
                    return Err(Error::invalid(format!(
                        "integrability requires tau (nu + 1/2) - gamma > 1, got {}",
                        tau * (nu + 0.5) - gamma
                    )));
                }
                Ok(())
            }
            OscillatoryMatern {
                phi,
                rho,
                nu,
                lambda,
                gamma,
            } => {
                check_pos(*phi, "phi")?;
                check_pos(*rho, "rho")?;
                check_pos(*nu, "nu")?;
                if *lambda < 0.0 {
                    return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
                }
                if !gamma.is_finite() {
                    return Err(Error::invalid("gamma must be finite"));
                }
                Ok(())
            }
            ChebyshevExponential {
                phi,
                alpha,
                lambda,
                rho,
                coeffs,
            } => {
                check_pos(*phi, "phi")?;
                check_pos(*rho, "rho")?;
                check_alpha(*alpha)?;
                if !(*lambda > 0.0) {
                    return Err(Error::invalid(format!(
                        "lambda must be positive for an integrable tail, got {lambda}"
                    )));
                }
                if coeffs.is_empty() {
                    return Err(Error::invalid("at least one Chebyshev coefficient is required"));
                }
                Ok(())
            }
            ExponentialTest { phi, alpha } => {
                check_pos(*phi, "phi")?;
                check_alpha(*alpha)
            }
            UserDefined(u) => {
                check_alpha(u.alpha)?;
                if u.params.len() != u.param_names.len() {
                    return Err(Error::invalid("user model parameter names/values length mismatch"));
                }
                Ok(())
            }
        }
    }

    /// Origin singularity exponent.
    pub fn alpha(&self) -> f64 {
        match self {
            Matern { .. } | GeneralizedMatern { .. } | OscillatoryMatern { .. } => 0.0,
            SingularMatern { alpha, .. }
            | ChebyshevExponential { alpha, .. }
            | ExponentialTest { alpha, .. } => *alpha,
            UserDefined(u) => u.alpha,
        }
    }

    /// Full density `S(omega)`, including any `omega^-alpha` factor.
    pub fn sdf(&self, omega: f64) -> Result<f64> {
        let alpha = self.alpha();
        if omega == 0.0 && alpha > 0.0 {
            return Err(Error::SingularOrigin { alpha });
        }
        let reg = self.sdf_regular(omega);
        Ok(if alpha == 0.0 {
            reg
        } else {
            omega.powf(-alpha) * reg
        })
    }

    /// Regular factor `omega^alpha * S(omega)`, finite at the origin.
    pub fn sdf_regular(&self, omega: f64) -> f64 {
        let w = omega.abs();
        match self {
            Matern { phi, rho, nu } | SingularMatern { phi, rho, nu, .. } => {
                phi * phi * (rho * rho + w * w).powf(-nu - 0.5)
            }
            GeneralizedMatern {
                phi,
                lambda,
                gamma,
                rho,
                tau,
                nu,
            } => {
                phi * phi
                    * (lambda + (1.0 - lambda) * w.powf(*gamma))
                    * (rho * rho + w.powf(*tau)).powf(-nu - 0.5)
            }
            OscillatoryMatern {
                phi,
                rho,
                nu,
                lambda,
                gamma,
            } => {
                phi * phi
                    * (rho * rho + w * w).powf(-nu - 0.5)
                    * (1.0 - (-lambda * w).exp() * (gamma * w).sin())
            }
            ChebyshevExponential {
                phi,
                lambda,
                rho,
                coeffs,
                ..
            } => {
                let u = (w - rho) / (w + rho);
                phi * phi * (-lambda * w + chebyshev_sum(coeffs, u)).exp()
            }
            ExponentialTest { phi, .. } => phi * phi * (-w).exp(),
            UserDefined(u) => (u.density)(w, &u.params),
        }
    }

    /// d/d omega of the regular factor, used by the integration-by-parts
    /// route for the alpha derivative.
    pub fn sdf_regular_domega(&self, omega: f64) -> f64 {
        let w = omega.abs();
        match self {
            Matern { rho, nu, .. } | SingularMatern { rho, nu, .. } => {
                let s = self.sdf_regular(w);
                -(2.0 * nu + 1.0) * w / (rho * rho + w * w) * s
            }
            GeneralizedMatern {
                phi,
                lambda,
                gamma,
                rho,
                tau,
                nu,
            } => {
                let base = (rho * rho + w.powf(*tau)).powf(-nu - 0.5);
                let poly = lambda + (1.0 - lambda) * w.powf(*gamma);
                let dpoly = if *gamma == 0.0 {
                    0.0
                } else {
                    (1.0 - lambda) * gamma * w.powf(gamma - 1.0)
                };
                let dbase = -(nu + 0.5) * tau * w.powf(tau - 1.0)
                    / (rho * rho + w.powf(*tau))
                    * base;
                phi * phi * (dpoly * base + poly * dbase)
            }
            OscillatoryMatern {
                phi,
                rho,
                nu,
                lambda,
                gamma,
            } => {
                let base = (rho * rho + w * w).powf(-nu - 0.5);
                let osc = 1.0 - (-lambda * w).exp() * (gamma * w).sin();
                let dbase = -(2.0 * nu + 1.0) * w / (rho * rho + w * w) * base;
                let dosc = (-lambda * w).exp() * (lambda * (gamma * w).sin() - gamma * (gamma * w).cos());
                phi * phi * (dbase * osc + base * dosc)
            }
            ChebyshevExponential {
                lambda,
                rho,
                coeffs,
                ..
            } => {
                let u = (w - rho) / (w + rho);
                let du = 2.0 * rho / ((w + rho) * (w + rho));
                let dsum: f64 = chebyshev_derivative_sum(coeffs, u) * du;
                self.sdf_regular(w) * (-lambda + dsum)
            }
            ExponentialTest { .. } => -self.sdf_regular(w),
            UserDefined(u) => {
                // Central difference; the user model carries no analytic form.
                let h = 1e-6 * w.max(1.0);
                ((u.density)(w + h, &u.params) - (u.density)((w - h).max(0.0), &u.params))
                    / (w + h - (w - h).max(0.0))
            }
        }
    }

    /// Names of the free parameters, in the order used by gradients and fits.
    pub fn param_names(&self) -> Vec<String> {
        let s = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match self {
            Matern { .. } => s(&["phi", "rho", "nu"]),
            SingularMatern { .. } => s(&["phi", "rho", "nu", "alpha"]),
            GeneralizedMatern { .. } => s(&["phi", "lambda", "gamma", "rho", "tau", "nu"]),
            OscillatoryMatern { .. } => s(&["phi", "rho", "nu", "lambda", "gamma"]),
            ChebyshevExponential { coeffs, .. } => {
                let mut names: Vec<String> = s(&["phi", "alpha", "lambda", "rho"]);
                for k in 0..coeffs.len() {
                    names.push(format!("c_{k}"));
                }
                names
            }
            ExponentialTest { .. } => s(&["phi", "alpha"]),
            UserDefined(u) => u.param_names.clone(),
        }
    }

    /// Current parameter values, aligned with `param_names`.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Matern { phi, rho, nu } => vec![*phi, *rho, *nu],
            SingularMatern { phi, rho, nu, alpha } => vec![*phi, *rho, *nu, *alpha],
            GeneralizedMatern {
                phi,
                lambda,
                gamma,
                rho,
                tau,
                nu,
            } => vec![*phi, *lambda, *gamma, *rho, *tau, *nu],
            OscillatoryMatern {
                phi,
                rho,
                nu,
                lambda,
                gamma,
            } => vec![*phi, *rho, *nu, *lambda, *gamma],
            ChebyshevExponential {
                phi,
                alpha,
                lambda,
                rho,
                coeffs,
            } => {
                let mut p = vec![*phi, *alpha, *lambda, *rho];
                p.extend_from_slice(coeffs);
                p
            }
            ExponentialTest { phi, alpha } => vec![*phi, *alpha],
            UserDefined(u) => u.params.clone(),
        }
    }

    /// Rebuild the model with new parameter values (same order as `params`).
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let expect = self.params().len();
        if p.len() != expect {
            return Err(Error::invalid(format!(
                "expected {expect} parameters, got {}",
                p.len()
            )));
        }
        match self {
            Matern { .. } => Self::matern(p[0], p[1], p[2]),
            SingularMatern { .. } => Self::singular_matern(p[0], p[1], p[2], p[3]),
            GeneralizedMatern { .. } => {
                Self::generalized_matern(p[0], p[1], p[2], p[3], p[4], p[5])
            }
            OscillatoryMatern { .. } => Self::oscillatory_matern(p[0], p[1], p[2], p[3], p[4]),
            ChebyshevExponential { .. } => {
                Self::chebyshev_exponential(p[0], p[1], p[2], p[3], p[4..].to_vec())
            }
            ExponentialTest { .. } => Self::exponential_test(p[0], p[1]),
            UserDefined(u) => {
                let mut u = u.clone();
                u.params = p.to_vec();
                Self::user_defined(u)
            }
        }
    }

    /// Index of the singularity parameter `alpha` in `param_names`, if the
    /// model has one.
    pub fn alpha_index(&self) -> Option<usize> {
        self.param_names().iter().position(|n| n == "alpha")
    }

    /// Gradient of the full density with respect to every free parameter.
    ///
    /// Catalog models are differentiated analytically; user models fall back
    /// to central differences with step `1e-6 * max(1, |theta_j|)`.
    pub fn sdf_gradient(&self, omega: f64) -> Result<Vec<f64>> {
        let alpha = self.alpha();
        if omega == 0.0 && alpha > 0.0 {
            return Err(Error::SingularOrigin { alpha });
        }
        let mut grad = self.sdf_regular_gradient(omega);
        if alpha > 0.0 {
            let w = omega.abs();
            let sing = w.powf(-alpha);
            for g in grad.iter_mut() {
                *g *= sing;
            }
            // The alpha slot additionally differentiates omega^-alpha itself.
            if let Some(ai) = self.alpha_index() {
                grad[ai] = -w.ln() * self.sdf(omega)? + grad[ai];
            }
        }
        Ok(grad)
    }

    /// Gradient of the regular factor `S_reg` with respect to every free
    /// parameter (the `alpha` slot holds the partial of `S_reg` only, which
    /// is zero for catalog models).
    pub fn sdf_regular_gradient(&self, omega: f64) -> Vec<f64> {
        let w = omega.abs();
        match self {
            Matern { phi, rho, nu } => {
                let s = self.sdf_regular(w);
                let q = rho * rho + w * w;
                vec![2.0 / phi * s, -(2.0 * nu + 1.0) * rho / q * s, -q.ln() * s]
            }
            SingularMatern { phi, rho, nu, .. } => {
                let s = self.sdf_regular(w);
                let q = rho * rho + w * w;
                vec![
                    2.0 / phi * s,
                    -(2.0 * nu + 1.0) * rho / q * s,
                    -q.ln() * s,
                    0.0,
                ]
            }
            GeneralizedMatern {
                phi,
                lambda,
                gamma,
                rho,
                tau,
                nu,
            } => {
                let base = (rho * rho + w.powf(*tau)).powf(-nu - 0.5);
                let poly = lambda + (1.0 - lambda) * w.powf(*gamma);
                let s = phi * phi * poly * base;
                let q = rho * rho + w.powf(*tau);
                let wg = w.powf(*gamma);
                let wt = w.powf(*tau);
                // omega^g log omega -> 0 as omega -> 0 for g > 0.
                let wg_log = if w == 0.0 { 0.0 } else { wg * w.ln() };
                let wt_log = if w == 0.0 { 0.0 } else { wt * w.ln() };
                vec![
                    2.0 / phi * s,
                    phi * phi * (1.0 - wg) * base,
                    phi * phi * (1.0 - lambda) * wg_log * base,
                    -(2.0 * nu + 1.0) * rho / q * s,
                    -(nu + 0.5) * wt_log / q * s,
                    -q.ln() * s,
                ]
            }
            OscillatoryMatern {
                phi,
                rho,
                nu,
                lambda,
                gamma,
            } => {
                let base = phi * phi * (rho * rho + w * w).powf(-nu - 0.5);
                let osc = 1.0 - (-lambda * w).exp() * (gamma * w).sin();
                let s = base * osc;
                let q = rho * rho + w * w;
                vec![
                    2.0 / phi * s,
                    -(2.0 * nu + 1.0) * rho / q * s,
                    -q.ln() * s,
                    base * w * (-lambda * w).exp() * (gamma * w).sin(),
                    -base * w * (-lambda * w).exp() * (gamma * w).cos(),
                ]
            }
            ChebyshevExponential {
                rho, coeffs, ..
            } => {
                let s = self.sdf_regular(w);
                let u = (w - rho) / (w + rho);
                let du_drho = -2.0 * w / ((w + rho) * (w + rho));
                let phi = match self {
                    ChebyshevExponential { phi, .. } => *phi,
                    _ => unreachable!(),
                };
                let mut g = vec![
                    2.0 / phi * s,
                    0.0, // alpha enters only through the singular factor
                    -w * s,
                    chebyshev_derivative_sum(coeffs, u) * du_drho * s,
                ];
                let mut t_prev = 1.0;
                let mut t_cur = u;
                for k in 0..coeffs.len() {
                    let tk = if k == 0 {
                        1.0
                    } else if k == 1 {
                        u
                    } else {
                        let t_next = 2.0 * u * t_cur - t_prev;
                        t_prev = t_cur;
                        t_cur = t_next;
                        t_next
                    };
                    g.push(tk * s);
                }
                g
            }
            ExponentialTest { phi, .. } => {
                let s = self.sdf_regular(w);
                vec![2.0 / phi * s, 0.0]
            }
            UserDefined(u) => {
                if let Some(gr) = &u.gradient {
                    return gr(w, &u.params);
                }
                let mut g = Vec::with_capacity(u.params.len());
                for j in 0..u.params.len() {
                    let h = 1e-6 * u.params[j].abs().max(1.0);
                    let mut up = u.params.clone();
                    let mut dn = u.params.clone();
                    up[j] += h;
                    dn[j] -= h;
                    g.push(((u.density)(w, &up) - (u.density)(w, &dn)) / (2.0 * h));
                }
                g
            }
        }
    }

    /// Analytic tail law where one is derivable; `None` means the engine must
    /// fit one by least squares near the integration frontier.
    pub fn tail_law(&self) -> Option<TailLaw> {
        match self {
            Matern { phi, rho, nu } => Some(TailLaw {
                ln_c: 2.0 * phi.ln(),
                beta: 2.0 * nu + 1.0,
                omega_min: 10.0 * rho.max(1.0),
            }),
            SingularMatern { phi, rho, nu, alpha } => Some(TailLaw {
                ln_c: 2.0 * phi.ln(),
                beta: alpha + 2.0 * nu + 1.0,
                omega_min: 10.0 * rho.max(1.0),
            }),
            GeneralizedMatern {
                phi,
                lambda,
                gamma,
                rho,
                tau,
                nu,
            } => {
                // Slowest-decaying term dominates; at gamma = 0 both terms
                // carry the same power and the constants add back to phi^2.
                let (c, beta) = if *lambda == 1.0 || *gamma == 0.0 {
                    (phi * phi, tau * (nu + 0.5))
                } else {
                    ((1.0 - lambda) * phi * phi, tau * (nu + 0.5) - gamma)
                };
                Some(TailLaw {
                    ln_c: c.ln(),
                    beta,
                    omega_min: 10.0 * rho.max(1.0),
                })
            }
            // The exp(-lambda omega) sin(gamma omega) factor decays, so the
            // tail matches the plain Matern even though a least-squares fit
            // at moderate omega would see the oscillation.
            OscillatoryMatern { phi, rho, nu, .. } => Some(TailLaw {
                ln_c: 2.0 * phi.ln(),
                beta: 2.0 * nu + 1.0,
                omega_min: 10.0 * rho.max(1.0),
            }),
            ChebyshevExponential { .. } | ExponentialTest { .. } => None,
            UserDefined(u) => u.tail,
        }
    }
}

/// Evaluate `sum_k c_k T_k(u)` by the three-term recurrence.
fn chebyshev_sum(coeffs: &[f64], u: f64) -> f64 {
    let mut sum = 0.0;
    let mut t_prev = 1.0;
    let mut t_cur = u;
    for (k, &c) in coeffs.iter().enumerate() {
        let tk = match k {
            0 => 1.0,
            1 => u,
            _ => {
                let t_next = 2.0 * u * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = t_next;
                t_next
            }
        };
        sum += c * tk;
    }
    sum
}

/// Evaluate `sum_k c_k T_k'(u)` via `T_k' = k U_{k-1}`.
fn chebyshev_derivative_sum(coeffs: &[f64], u: f64) -> f64 {
    let mut sum = 0.0;
    let mut u_prev = 1.0; // U_0
    let mut u_cur = 2.0 * u; // U_1
    for (k, &c) in coeffs.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let uk1 = match k {
            1 => 1.0,
            2 => 2.0 * u,
            _ => {
                let u_next = 2.0 * u * u_cur - u_prev;
                u_prev = u_cur;
                u_cur = u_next;
                u_next
            }
        };
        sum += c * k as f64 * uk1;
    }
    sum
}

/// Fit `log S = log c - beta log omega` by least squares over a geometric
/// grid of 64 points spanning `[omega_hi / 10, omega_hi]`.
///
/// The fit is applied to `|f|`, so it also serves derivative integrands that
/// change sign; zero samples are skipped.
pub fn fit_tail_law(f: impl Fn(f64) -> f64, omega_hi: f64) -> Result<TailLaw> {
    const POINTS: usize = 64;
    let lo = omega_hi / 10.0;
    let ratio = (omega_hi / lo).powf(1.0 / (POINTS - 1) as f64);
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    let mut sum_xx = 0.0;
    let mut sum_xy = 0.0;
    let mut n = 0.0;
    let mut w = lo;
    for _ in 0..POINTS {
        let v = f(w).abs();
        if v > 0.0 && v.is_finite() {
            let x = w.ln();
            let y = v.ln();
            sum_x += x;
            sum_y += y;
            sum_xx += x * x;
            sum_xy += x * y;
            n += 1.0;
        }
        w *= ratio;
    }
    if n < 2.0 {
        return Err(Error::invalid(
            "tail fit failed: too few positive samples in the last decade",
        ));
    }
    let denom = n * sum_xx - sum_x * sum_x;
    let slope = (n * sum_xy - sum_x * sum_y) / denom;
    let intercept = (sum_y - slope * sum_x) / n;
    let beta = -slope;
    TailLaw::from_ln_c(intercept, beta, lo)
}

// ---------------------------------------------------------------------------
// JSON model configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    model: String,
    params: ParamConfig,
    #[serde(default)]
    normalize: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamConfig {
    #[serde(default)]
    phi: Option<f64>,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    nu: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    coeffs: Option<Vec<f64>>,
}

/// Parse a model description from JSON text. `normalize: true` requests
/// amplitude normalization to `K(0) = 1`, which the caller applies through
/// the engine.
pub fn model_from_json(text: &str) -> Result<(SpectralModel, bool)> {
    let cfg: ModelConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let p = &cfg.params;
    let need = |v: Option<f64>, name: &str| -> Result<f64> {
        v.ok_or_else(|| Error::Config(format!("model '{}' requires parameter '{name}'", cfg.model)))
    };
    let model = match cfg.model.as_str() {
        "matern" => SpectralModel::matern(need(p.phi, "phi")?, need(p.rho, "rho")?, need(p.nu, "nu")?)?,
        "singular_matern" => SpectralModel::singular_matern(
            need(p.phi, "phi")?,
            need(p.rho, "rho")?,
            need(p.nu, "nu")?,
            need(p.alpha, "alpha")?,
        )?,
        "generalized_matern" => SpectralModel::generalized_matern(
            need(p.phi, "phi")?,
            need(p.lambda, "lambda")?,
            need(p.gamma, "gamma")?,
            need(p.rho, "rho")?,
            need(p.tau, "tau")?,
            need(p.nu, "nu")?,
        )?,
        "oscillatory_matern" => SpectralModel::oscillatory_matern(
            need(p.phi, "phi")?,
            need(p.rho, "rho")?,
            need(p.nu, "nu")?,
            need(p.lambda, "lambda")?,
            need(p.gamma, "gamma")?,
        )?,
        "chebyshev_exponential" => SpectralModel::chebyshev_exponential(
            need(p.phi, "phi")?,
            need(p.alpha, "alpha")?,
            need(p.lambda, "lambda")?,
            need(p.rho, "rho")?,
            p.coeffs
                .clone()
                .ok_or_else(|| Error::Config("chebyshev_exponential requires 'coeffs'".into()))?,
        )?,
        "exponential_test" => {
            SpectralModel::exponential_test(need(p.phi, "phi")?, p.alpha.unwrap_or(0.0))?
        }
        other => {
            return Err(Error::Config(format!("unknown model kind '{other}'")));
        }
    };
    Ok((model, cfg.normalize))
}
