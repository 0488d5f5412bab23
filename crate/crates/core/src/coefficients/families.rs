//! Named radial profiles used for GS-class coefficient perturbations
//! `g(r)` and for boundary graphs `h(x̃) = H(|x̃|)`.

use serde::{Deserialize, Serialize};

/// Sign selector for the log-power family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    #[serde(alias = "+")]
    Plus,
    #[serde(alias = "-")]
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

fn default_sign() -> Sign {
    Sign::Plus
}

/// A scalar function of the radius with a closed-form derivative.
///
/// As a coefficient perturbation `g(r)` the families read
/// `c·r^γ`, `s·c·(1 − log r)^{−α}` and `c·sin(ln(1/r))·(1 − log r)^{−α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RadialProfile {
    Zero,
    /// Constant value; not a modulus of continuity (it does not vanish at
    /// the origin), used only for algebraic checks.
    Constant { c: f64 },
    Power { c: f64, gamma: f64 },
    Logpow {
        c: f64,
        alpha: f64,
        #[serde(default = "default_sign")]
        sign: Sign,
    },
    Sinlog { c: f64, alpha: f64 },
}

impl RadialProfile {
    /// `L(r) = 1 − log r`, the variable in which the log families are written.
    fn ell(r: f64) -> f64 {
        1.0 - r.ln()
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Zero => 0.0,
            RadialProfile::Constant { c } => c,
            RadialProfile::Power { c, gamma } => c * r.powf(gamma),
            RadialProfile::Logpow { c, alpha, sign } => {
                if r <= 0.0 {
                    0.0
                } else {
                    sign.factor() * c * Self::ell(r).powf(-alpha)
                }
            }
            RadialProfile::Sinlog { c, alpha } => {
                if r <= 0.0 {
                    0.0
                } else {
                    c * (-r.ln()).sin() * Self::ell(r).powf(-alpha)
                }
            }
        }
    }

    /// d/dr of [`value`](Self::value).
    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Zero | RadialProfile::Constant { .. } => 0.0,
            RadialProfile::Power { c, gamma } => c * gamma * r.powf(gamma - 1.0),
            RadialProfile::Logpow { c, alpha, sign } => {
                sign.factor() * c * alpha * Self::ell(r).powf(-alpha - 1.0) / r
            }
            RadialProfile::Sinlog { c, alpha } => {
                let l = Self::ell(r);
                let s = -r.ln();
                c / r * (-s.cos() * l.powf(-alpha) + alpha * s.sin() * l.powf(-alpha - 1.0))
            }
        }
    }

    /// The profile in the logarithmic variable, `g̃(t) = g(e^{−t})`.
    pub fn in_t(&self, t: f64) -> f64 {
        match *self {
            RadialProfile::Logpow { c, alpha, sign } => sign.factor() * c * (1.0 + t).powf(-alpha),
            RadialProfile::Sinlog { c, alpha } => c * t.sin() * (1.0 + t).powf(-alpha),
            RadialProfile::Power { c, gamma } => c * (-gamma * t).exp(),
            _ => self.value((-t).exp()),
        }
    }

    /// `dg̃/dt`.
    pub fn in_t_derivative(&self, t: f64) -> f64 {
        match *self {
            RadialProfile::Zero | RadialProfile::Constant { .. } => 0.0,
            RadialProfile::Power { c, gamma } => -c * gamma * (-gamma * t).exp(),
            RadialProfile::Logpow { c, alpha, sign } => {
                -sign.factor() * c * alpha * (1.0 + t).powf(-alpha - 1.0)
            }
            RadialProfile::Sinlog { c, alpha } => {
                c * (t.cos() * (1.0 + t).powf(-alpha) - alpha * t.sin() * (1.0 + t).powf(-alpha - 1.0))
            }
        }
    }

    /// A nondecreasing majorant of `|value|` on (0, 1] with the vanishing
    /// exponent it satisfies. `None` when the profile does not vanish at the
    /// origin.
    pub fn modulus_profile(&self) -> Option<(ModulusShape, f64)> {
        match *self {
            RadialProfile::Zero => Some((ModulusShape::Zero, 0.5)),
            RadialProfile::Constant { c } if c == 0.0 => Some((ModulusShape::Zero, 0.5)),
            RadialProfile::Constant { .. } => None,
            RadialProfile::Power { c, gamma } if gamma > 0.0 => {
                let beta = gamma.min(0.5);
                Some((ModulusShape::Power { c: c.abs(), beta }, 1.0 - beta))
            }
            RadialProfile::Power { .. } => None,
            RadialProfile::Logpow { c, alpha, .. } | RadialProfile::Sinlog { c, alpha }
                if alpha > 0.0 =>
            {
                Some((ModulusShape::Logpow { c: c.abs(), alpha }, 0.5))
            }
            _ => None,
        }
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        match *self {
            RadialProfile::Zero => "zero".into(),
            RadialProfile::Constant { c } => format!("constant({c})"),
            RadialProfile::Power { c, gamma } => format!("power(c={c}, gamma={gamma})"),
            RadialProfile::Logpow { c, alpha, sign } => {
                format!("logpow(c={c}, alpha={alpha}, sign={})", if sign == Sign::Plus { "+" } else { "-" })
            }
            RadialProfile::Sinlog { c, alpha } => format!("sinlog(c={c}, alpha={alpha})"),
        }
    }
}

/// Closed-form modulus shapes that majorize the built-in profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ModulusShape {
    Zero,
    /// `c·r^β`
    Power { c: f64, beta: f64 },
    /// `c·(1 − log r)^{−α}`
    Logpow { c: f64, alpha: f64 },
}

impl ModulusShape {
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.min(1.0);
        match *self {
            ModulusShape::Zero => 0.0,
            ModulusShape::Power { c, beta } => c * r.powf(beta),
            ModulusShape::Logpow { c, alpha } => {
                if r <= 0.0 {
                    0.0
                } else {
                    c * (1.0 - r.ln()).powf(-alpha)
                }
            }
        }
    }

    pub fn scaled(&self, k: f64) -> ModulusShape {
        match *self {
            ModulusShape::Zero => ModulusShape::Zero,
            ModulusShape::Power { c, beta } => ModulusShape::Power { c: c * k, beta },
            ModulusShape::Logpow { c, alpha } => ModulusShape::Logpow { c: c * k, alpha },
        }
    }
}

/// Radial boundary profiles `h(x̃) = H(|x̃|)` with `H(0) = H'(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GraphProfile {
    Flat,
    /// `c·ρ^γ` with γ > 1.
    Power { c: f64, gamma: f64 },
    /// `c·ρ·(1 − log ρ)^{−α}`.
    Logpow { c: f64, alpha: f64 },
    /// `c·ρ·sin(ln(1/ρ))·(1 − log ρ)^{−α}`.
    Sinlog { c: f64, alpha: f64 },
}

impl GraphProfile {
    pub fn value(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match *self {
            GraphProfile::Flat => 0.0,
            GraphProfile::Power { c, gamma } => c * rho.powf(gamma),
            GraphProfile::Logpow { c, alpha } => c * rho * (1.0 - rho.ln()).powf(-alpha),
            GraphProfile::Sinlog { c, alpha } => {
                c * rho * (-rho.ln()).sin() * (1.0 - rho.ln()).powf(-alpha)
            }
        }
    }

    /// `H'(ρ)`.
    pub fn slope(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match *self {
            GraphProfile::Flat => 0.0,
            GraphProfile::Power { c, gamma } => c * gamma * rho.powf(gamma - 1.0),
            GraphProfile::Logpow { c, alpha } => {
                let l = 1.0 - rho.ln();
                c * l.powf(-alpha) * (1.0 + alpha / l)
            }
            GraphProfile::Sinlog { c, alpha } => {
                let s = -rho.ln();
                let l = 1.0 + s;
                c * l.powf(-alpha) * (s.sin() - s.cos() + alpha * s.sin() / l)
            }
        }
    }

    /// Majorant of `|H'|` on (0, 1] and its vanishing exponent.
    pub fn modulus_profile(&self) -> Option<(ModulusShape, f64)> {
        match *self {
            GraphProfile::Flat => Some((ModulusShape::Zero, 0.5)),
            GraphProfile::Power { c, gamma } if gamma > 1.0 => {
                let beta = (gamma - 1.0).min(0.5);
                Some((ModulusShape::Power { c: (c * gamma).abs(), beta }, 1.0 - beta))
            }
            GraphProfile::Logpow { c, alpha } if alpha > 0.0 => {
                Some((ModulusShape::Logpow { c: c.abs() * (1.0 + alpha), alpha }, 0.5))
            }
            GraphProfile::Sinlog { c, alpha } if alpha > 0.0 => {
                Some((ModulusShape::Logpow { c: c.abs() * (2.0 + alpha), alpha }, 0.5))
            }
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            GraphProfile::Flat => "flat".into(),
            GraphProfile::Power { c, gamma } => format!("power(c={c}, gamma={gamma})"),
            GraphProfile::Logpow { c, alpha } => format!("logpow(c={c}, alpha={alpha})"),
            GraphProfile::Sinlog { c, alpha } => format!("sinlog(c={c}, alpha={alpha})"),
        }
    }
}
