//! Sojourn-time distributions: sampling, Laplace transforms, tails and
//! truncated first moments.
//!
//! Distributions carry no ε-dependence; scaling with ε is done by whoever
//! builds the kernel for a given ε.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{invalid, Error, Result};
use crate::quad;

/// Absolute error target for quadrature-backed transforms.
pub const QUAD_TOL: f64 = 1e-12;

/// Law of a nonnegative sojourn time.
///
/// `Pareto` is the Pareto law shifted to start at zero (Lomax):
/// `P{X > x} = (1 + x/scale)^{-index}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", try_from = "DistRepr")]
pub enum SojournDistribution {
    #[serde(rename = "det")]
    Deterministic { value: f64 },
    #[serde(rename = "exp")]
    Exponential { mean: f64 },
    /// `value` with probability `prob`, otherwise zero.
    #[serde(rename = "atom")]
    Atom { value: f64, prob: f64 },
    #[serde(rename = "gamma")]
    Gamma { shape: f64, scale: f64 },
    #[serde(rename = "pareto")]
    Pareto { index: f64, scale: f64 },
    #[serde(rename = "mix")]
    Mixture {
        weights: Vec<f64>,
        components: Vec<SojournDistribution>,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind")]
enum DistRepr {
    #[serde(rename = "det")]
    Deterministic { value: f64 },
    #[serde(rename = "exp")]
    Exponential { mean: f64 },
    #[serde(rename = "atom")]
    Atom { value: f64, prob: f64 },
    #[serde(rename = "gamma")]
    Gamma { shape: f64, scale: f64 },
    #[serde(rename = "pareto")]
    Pareto { index: f64, scale: f64 },
    #[serde(rename = "mix")]
    Mixture {
        weights: Vec<f64>,
        components: Vec<SojournDistribution>,
    },
}

impl TryFrom<DistRepr> for SojournDistribution {
    type Error = Error;

    fn try_from(r: DistRepr) -> Result<Self> {
        let d = match r {
            DistRepr::Deterministic { value } => Self::Deterministic { value },
            DistRepr::Exponential { mean } => Self::Exponential { mean },
            DistRepr::Atom { value, prob } => Self::Atom { value, prob },
            DistRepr::Gamma { shape, scale } => Self::Gamma { shape, scale },
            DistRepr::Pareto { index, scale } => Self::Pareto { index, scale },
            DistRepr::Mixture {
                weights,
                components,
            } => Self::Mixture {
                weights,
                components,
            },
        };
        d.validate()?;
        Ok(d)
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

impl SojournDistribution {
    pub fn deterministic(value: f64) -> Result<Self> {
        let d = Self::Deterministic { value };
        d.validate().map(|_| d)
    }

    pub fn exponential(mean: f64) -> Result<Self> {
        let d = Self::Exponential { mean };
        d.validate().map(|_| d)
    }

    pub fn atom(value: f64, prob: f64) -> Result<Self> {
        let d = Self::Atom { value, prob };
        d.validate().map(|_| d)
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        let d = Self::Gamma { shape, scale };
        d.validate().map(|_| d)
    }

    pub fn pareto(index: f64, scale: f64) -> Result<Self> {
        let d = Self::Pareto { index, scale };
        d.validate().map(|_| d)
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<SojournDistribution>) -> Result<Self> {
        let d = Self::Mixture {
            weights,
            components,
        };
        d.validate().map(|_| d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Deterministic { value } => {
                if value.is_finite() && *value >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("deterministic value must be >= 0, got {value}")))
                }
            }
            Self::Exponential { mean } => positive("exponential mean", *mean),
            Self::Atom { value, prob } => {
                positive("atom value", *value)?;
                if (0.0..=1.0).contains(prob) {
                    Ok(())
                } else {
                    Err(invalid(format!("atom probability must lie in [0,1], got {prob}")))
                }
            }
            Self::Gamma { shape, scale } => {
                positive("gamma shape", *shape)?;
                positive("gamma scale", *scale)
            }
            Self::Pareto { index, scale } => {
                positive("pareto index", *index)?;
                positive("pareto scale", *scale)
            }
            Self::Mixture {
                weights,
                components,
            } => {
                if weights.is_empty() || weights.len() != components.len() {
                    return Err(invalid("mixture needs one weight per component"));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(invalid("mixture weights must be nonnegative"));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > crate::chain::SUM_TOL {
                    return Err(invalid(format!("mixture weights sum to {sum}")));
                }
                components.iter().try_for_each(|c| c.validate())
            }
        }
    }

    /// Whether the law is the point mass at zero.
    pub fn is_zero(&self) -> bool {
        match self {
            Self::Deterministic { value } => *value == 0.0,
            Self::Atom { prob, .. } => *prob == 0.0,
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .all(|(w, c)| *w == 0.0 || c.is_zero()),
            _ => false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Deterministic { value } => *value,
            Self::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
            Self::Atom { value, prob } => {
                if rng.random::<f64>() < *prob {
                    *value
                } else {
                    0.0
                }
            }
            Self::Gamma { shape, scale } => Gamma::new(*shape, *scale)
                .expect("validated gamma parameters")
                .sample(rng),
            Self::Pareto { index, scale } => {
                let u = 1.0 - rng.random::<f64>();
                scale * (u.powf(-1.0 / index) - 1.0)
            }
            Self::Mixture {
                weights,
                components,
            } => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w;
                    if u < acc {
                        return c.sample(rng);
                    }
                }
                // round-off left u above the last partial sum
                let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
                components[last].sample(rng)
            }
        }
    }

    /// `E e^{-sX}`.
    pub fn laplace(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(invalid(format!("Laplace argument must be >= 0, got {s}")));
        }
        Ok(match self {
            Self::Deterministic { value } => (-s * value).exp(),
            Self::Exponential { mean } => 1.0 / (1.0 + mean * s),
            Self::Atom { value, prob } => 1.0 - prob + prob * (-s * value).exp(),
            Self::Gamma { shape, scale } => (1.0 + scale * s).powf(-shape),
            Self::Pareto { index, scale } => 1.0 - pareto_complement(*index, *scale, s)?,
            Self::Mixture {
                weights,
                components,
            } => {
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    if *w > 0.0 {
                        acc += w * c.laplace(s)?;
                    }
                }
                acc
            }
        })
    }

    /// `1 − E e^{-sX}`, evaluated without cancellation for small `s`.
    pub fn laplace_complement(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(invalid(format!("Laplace argument must be >= 0, got {s}")));
        }
        Ok(match self {
            Self::Deterministic { value } => -(-s * value).exp_m1(),
            Self::Exponential { mean } => mean * s / (1.0 + mean * s),
            Self::Atom { value, prob } => -prob * (-s * value).exp_m1(),
            Self::Gamma { shape, scale } => -(-shape * (scale * s).ln_1p()).exp_m1(),
            Self::Pareto { index, scale } => pareto_complement(*index, *scale, s)?,
            Self::Mixture {
                weights,
                components,
            } => {
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    if *w > 0.0 {
                        acc += w * c.laplace_complement(s)?;
                    }
                }
                acc
            }
        })
    }

    /// `1 − F(u)` with `F` right-continuous.
    pub fn tail(&self, u: f64) -> f64 {
        match self {
            Self::Deterministic { value } => f64::from(*value > u),
            Self::Exponential { mean } => (-u / mean).exp(),
            Self::Atom { value, prob } => {
                if *value > u {
                    *prob
                } else {
                    0.0
                }
            }
            Self::Gamma { shape, scale } => {
                if u <= 0.0 {
                    1.0
                } else {
                    gamma_ur(*shape, u / scale)
                }
            }
            Self::Pareto { index, scale } => (1.0 + u.max(0.0) / scale).powf(-index),
            Self::Mixture {
                weights,
                components,
            } => weights.iter().zip(components).map(|(w, c)| w * c.tail(u)).sum(),
        }
    }

    /// `∫_{(0,u]} v dF(v)`.
    pub fn truncated_mean(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Deterministic { value } => {
                if *value <= u {
                    *value
                } else {
                    0.0
                }
            }
            Self::Exponential { mean } => {
                let r = u / mean;
                mean * (1.0 - (-r).exp() * (1.0 + r))
            }
            Self::Atom { value, prob } => {
                if *value <= u {
                    prob * value
                } else {
                    0.0
                }
            }
            Self::Gamma { shape, scale } => shape * scale * gamma_lr(shape + 1.0, u / scale),
            Self::Pareto { index, scale } => {
                let a = *index;
                let y = 1.0 + u / scale;
                let boundary = -u * y.powf(-a);
                let bulk = if (a - 1.0).abs() < 1e-12 {
                    scale * y.ln()
                } else {
                    scale / (1.0 - a) * (y.powf(1.0 - a) - 1.0)
                };
                (boundary + bulk).max(0.0)
            }
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.truncated_mean(u))
                .sum(),
        }
    }

    /// `E X` (infinite for Pareto with index ≤ 1).
    pub fn mean(&self) -> f64 {
        match self {
            Self::Deterministic { value } => *value,
            Self::Exponential { mean } => *mean,
            Self::Atom { value, prob } => value * prob,
            Self::Gamma { shape, scale } => shape * scale,
            Self::Pareto { index, scale } => {
                if *index > 1.0 {
                    scale / (index - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, c)| w * c.mean())
                .sum(),
        }
    }

    /// `E X²` (infinite for Pareto with index ≤ 2).
    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Deterministic { value } => value * value,
            Self::Exponential { mean } => 2.0 * mean * mean,
            Self::Atom { value, prob } => prob * value * value,
            Self::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
            Self::Pareto { index, scale } => {
                if *index > 2.0 {
                    2.0 * scale * scale / ((index - 1.0) * (index - 2.0))
                } else {
                    f64::INFINITY
                }
            }
            Self::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, c)| w * c.second_moment())
                .sum(),
        }
    }
}

/// `1 − E e^{-sX}` for the shifted Pareto law.
///
/// Integration by parts gives `1 − L(s) = ∫_0^∞ e^{-u} (1 + u/c)^{-α} du` with
/// `c = s·scale`. The integrand varies on the scale `c` near the origin, so
/// panels double from `c` up to 1 and then up to 40, beyond which the
/// remaining mass is below `e^{-40}`.
fn pareto_complement(index: f64, scale: f64, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let c = s * scale;
    let mut breaks = vec![0.0];
    let mut x = c;
    while x < 1.0 {
        breaks.push(x);
        x *= 2.0;
    }
    for b in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 40.0] {
        if b > *breaks.last().unwrap() {
            breaks.push(b);
        }
    }
    let f = |u: f64| (-u).exp() * (1.0 + u / c).powf(-index);
    let value = quad::integrate_panels(f, &breaks, QUAD_TOL)?;
    Ok(value.clamp(0.0, 1.0))
}
