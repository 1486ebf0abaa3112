//! Marginal laws of the weight entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Law of one positive weight entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Constant { c: f64 },
    /// Uniform on `(a, b)`; `a = 0` is allowed, the open interval keeps samples positive.
    Uniform { a: f64, b: f64 },
    /// `v1` with probability `p`, `v2` otherwise.
    TwoPoint { v1: f64, p: f64, v2: f64 },
    /// Pareto law `P(X > x) = (x_m / x)^alpha` for `x >= x_m`.
    Pareto { x_m: f64, alpha: f64 },
    /// `exp(N(mu, sigma^2))`.
    Lognormal { mu: f64, sigma: f64 },
}

fn finite_positive(name: &str, field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("{name} must be a finite positive number, got {v}")))
    }
}

impl DistributionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::Uniform { .. } => "uniform",
            Self::TwoPoint { .. } => "two_point",
            Self::Pareto { .. } => "pareto",
            Self::Lognormal { .. } => "lognormal",
        }
    }

    /// Check parameters; `field` is used in the error message to locate the law
    /// inside a larger configuration.
    pub fn validate(&self, field: &str) -> Result<()> {
        let f = format!("{field}.{}", self.name());
        match *self {
            Self::Constant { c } => finite_positive("c", &f, c),
            Self::Uniform { a, b } => {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::config(f, format!("a must be finite and >= 0, got {a}")));
                }
                if !(b.is_finite() && b > a) {
                    return Err(Error::config(f, format!("b must be finite and > a, got a={a}, b={b}")));
                }
                Ok(())
            }
            Self::TwoPoint { v1, p, v2 } => {
                finite_positive("v1", &f, v1)?;
                finite_positive("v2", &f, v2)?;
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::config(f, format!("p must lie in (0, 1), got {p}")));
                }
                if v1 == v2 {
                    return Err(Error::config(f, "v1 and v2 must differ"));
                }
                Ok(())
            }
            Self::Pareto { x_m, alpha } => {
                finite_positive("x_m", &f, x_m)?;
                finite_positive("alpha", &f, alpha)
            }
            Self::Lognormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::config(f, format!("mu must be finite, got {mu}")));
                }
                finite_positive("sigma", &f, sigma)
            }
        }
    }

    /// Inverse-CDF style sample from a pair of independent uniforms in (0, 1).
    /// Only the lognormal law consumes the second uniform.
    pub fn sample(&self, u: f64, u2: f64) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::Uniform { a, b } => a + (b - a) * u,
            Self::TwoPoint { v1, p, v2 } => {
                if u < p {
                    v1
                } else {
                    v2
                }
            }
            Self::Pareto { x_m, alpha } => x_m * u.powf(-1.0 / alpha),
            Self::Lognormal { mu, sigma } => {
                let z = (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (mu + sigma * z).exp()
            }
        }
    }

    pub fn uses_second_uniform(&self) -> bool {
        matches!(self, Self::Lognormal { .. })
    }

    /// `E[X]`, `+inf` for Pareto laws with `alpha <= 1`.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::TwoPoint { v1, p, v2 } => p * v1 + (1.0 - p) * v2,
            Self::Pareto { x_m, alpha } => {
                if alpha <= 1.0 {
                    f64::INFINITY
                } else {
                    alpha * x_m / (alpha - 1.0)
                }
            }
            Self::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    /// Variance, `+inf` when it does not exist.
    pub fn variance(&self) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::Uniform { a, b } => (b - a) * (b - a) / 12.0,
            Self::TwoPoint { v1, p, v2 } => p * (1.0 - p) * (v1 - v2) * (v1 - v2),
            Self::Pareto { x_m, alpha } => {
                if alpha <= 2.0 {
                    f64::INFINITY
                } else {
                    x_m * x_m * alpha / ((alpha - 1.0) * (alpha - 1.0) * (alpha - 2.0))
                }
            }
            Self::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
        }
    }

    /// Essential infimum of the law.
    pub fn ess_inf(&self) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::Uniform { a, .. } => a,
            Self::TwoPoint { v1, v2, .. } => v1.min(v2),
            Self::Pareto { x_m, .. } => x_m,
            Self::Lognormal { .. } => 0.0,
        }
    }

    /// Essential supremum of the law.
    pub fn ess_sup(&self) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::Uniform { b, .. } => b,
            Self::TwoPoint { v1, v2, .. } => v1.max(v2),
            Self::Pareto { .. } | Self::Lognormal { .. } => f64::INFINITY,
        }
    }

    /// `P(X < x)`.
    pub fn prob_below(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { c } => {
                if c < x {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Self::TwoPoint { v1, p, v2 } => {
                let mut q = 0.0;
                if v1 < x {
                    q += p;
                }
                if v2 < x {
                    q += 1.0 - p;
                }
                q
            }
            Self::Pareto { x_m, alpha } => {
                if x <= x_m {
                    0.0
                } else {
                    1.0 - (x_m / x).powf(alpha)
                }
            }
            Self::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_cdf((x.ln() - mu) / sigma)
                }
            }
        }
    }

    /// Finite support as (value, probability) pairs, when the law has one.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Self::Constant { c } => Some(vec![(c, 1.0)]),
            Self::TwoPoint { v1, p, v2 } => Some(vec![(v1, p), (v2, 1.0 - p)]),
            _ => None,
        }
    }
}

/// Standard normal CDF, accurate to about 1e-7.
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, fractional error < 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
