//! Limit laws: cumulants of nonnegative infinitely divisible laws with a
//! finite atomic Lévy measure, the subordinator `θ₀`, and the time-changed
//! process `ξ₀(t) = θ₀(t ν₀)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};

/// `A(s) = g s + Σ_k w_k (1 − e^{-s v_k})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CumulantRepr", into = "CumulantRepr")]
pub struct Cumulant {
    g: f64,
    atoms: Vec<(f64, f64)>,
    /// Cumulative atom weights for jump-size sampling.
    cum_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CumulantRepr {
    g: f64,
    #[serde(default)]
    atoms: Vec<[f64; 2]>,
}

impl TryFrom<CumulantRepr> for Cumulant {
    type Error = Error;
    fn try_from(r: CumulantRepr) -> Result<Self> {
        Cumulant::new(r.g, r.atoms.into_iter().map(|[v, w]| (v, w)).collect())
    }
}

impl From<Cumulant> for CumulantRepr {
    fn from(c: Cumulant) -> Self {
        CumulantRepr {
            g: c.g,
            atoms: c.atoms.iter().map(|&(v, w)| [v, w]).collect(),
        }
    }
}

impl Cumulant {
    /// Drift `g ≥ 0` plus atoms `(jump size v > 0, weight w > 0)`.
    pub fn new(g: f64, atoms: Vec<(f64, f64)>) -> Result<Self> {
        if !(g >= 0.0) || !g.is_finite() {
            return Err(invalid(format!("drift must be finite and >= 0, got {g}")));
        }
        for &(v, w) in &atoms {
            if !(v > 0.0 && v.is_finite() && w > 0.0 && w.is_finite()) {
                return Err(invalid(format!("atom ({v}, {w}) needs positive finite size and weight")));
            }
        }
        let nondegenerate = g + atoms.iter().map(|(v, w)| w * v / (1.0 + v)).sum::<f64>();
        if !(nondegenerate > 0.0) {
            return Err(invalid("cumulant is identically zero"));
        }
        let mut acc = 0.0;
        let cum_weights = atoms
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { g, atoms, cum_weights })
    }

    pub fn drift(g: f64) -> Result<Self> {
        Self::new(g, Vec::new())
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Total jump rate `Σ w_k`.
    pub fn jump_rate(&self) -> f64 {
        self.cum_weights.last().copied().unwrap_or(0.0)
    }

    /// `E θ₀(1) = g + Σ w_k v_k`.
    pub fn mean(&self) -> f64 {
        self.g + self.atoms.iter().map(|(v, w)| v * w).sum::<f64>()
    }

    /// `A(s)`.
    pub fn eval(&self, s: f64) -> f64 {
        self.g * s
            + self
                .atoms
                .iter()
                .map(|(v, w)| -w * (-s * v).exp_m1())
                .sum::<f64>()
    }

    /// `E e^{-sθ₀(t)} = e^{-tA(s)}`.
    pub fn limit_laplace_theta(&self, t: f64, s: f64) -> f64 {
        (-t * self.eval(s)).exp()
    }

    /// `E e^{-sξ₀(1)} = 1/(1 + A(s))`.
    pub fn limit_laplace_xi(&self, s: f64) -> f64 {
        1.0 / (1.0 + self.eval(s))
    }

    /// `E exp(−Σ_r s_r ξ₀(t_r))` for a nondecreasing grid.
    ///
    /// Conditioning on `ν₀ = x` the subordinator increments are independent,
    /// so the transform is `∫ e^{-x} exp(−x Σ_r (t_r − t_{r−1}) A(S_r)) dx`
    /// with `S_r = s_r + … + s_R`, which integrates to
    /// `1 / (1 + Σ_r (t_r − t_{r−1}) A(S_r))`.
    pub fn limit_joint_laplace_xi(&self, t_grid: &[f64], s: &[f64]) -> Result<f64> {
        if t_grid.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: t_grid.len(),
                got: s.len(),
            });
        }
        check_grid(t_grid)?;
        let mut exponent = 0.0;
        let mut prev = 0.0;
        for r in 0..t_grid.len() {
            let tail: f64 = s[r..].iter().sum();
            exponent += (t_grid[r] - prev) * self.eval(tail);
            prev = t_grid[r];
        }
        Ok(1.0 / (1.0 + exponent))
    }

    fn jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * self.jump_rate();
        let k = self.cum_weights.partition_point(|c| *c <= u);
        self.atoms[k.min(self.atoms.len() - 1)].0
    }

    /// Atom discretization of the stable Lévy measure `c α v^{-α-1} dv`,
    /// whose cumulant is `c Γ(1−α) s^α`.
    ///
    /// Jumps below `v_min` become the drift `c α v_min^{1−α}/(1−α)`.
    /// `[v_min, v_max)` is cut into geometric cells, `per_decade` to a decade,
    /// and each cell's mass sits at its conditional mean jump. The mass above
    /// `v_max` sits at `v_max 2^{1/α}`, the median of the tail.
    ///
    /// The drift overstates `A(s)` by at most `s² c α v_min^{2−α} / (2(2−α))`,
    /// since `sv − (1 − e^{-sv}) ≤ (sv)²/2`. Each cell understates by at most
    /// `s²/2` times its second moment about the mean, which is of relative
    /// order `(r − 1)²` for cell ratio `r`. The tail atom errs by at most
    /// `c v_max^{-α} e^{-s v_max}`.
    pub fn stable_approximation(alpha: f64, c: f64, v_min: f64, v_max: f64, per_decade: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("stable index must lie in (0,1), got {alpha}")));
        }
        if !(c > 0.0 && v_min > 0.0 && v_max > v_min && per_decade > 0) {
            return Err(invalid("stable discretization needs c > 0 and 0 < v_min < v_max"));
        }
        let g = c * alpha / (1.0 - alpha) * v_min.powf(1.0 - alpha);
        let ratio = 10f64.powf(1.0 / per_decade as f64);
        let mut atoms = Vec::new();
        let mut a = v_min;
        while a < v_max * (1.0 - 1e-12) {
            let b = (a * ratio).min(v_max);
            let mass = c * (a.powf(-alpha) - b.powf(-alpha));
            let first = c * alpha / (1.0 - alpha) * (b.powf(1.0 - alpha) - a.powf(1.0 - alpha));
            atoms.push((first / mass, mass));
            a = b;
        }
        atoms.push((v_max * 2f64.powf(1.0 / alpha), c * v_max.powf(-alpha)));
        Self::new(g, atoms)
    }
}

/// `c Γ(1−α) s^α`.
pub fn stable_cumulant(alpha: f64, c: f64, s: f64) -> f64 {
    c * gamma(1.0 - alpha) * s.powf(alpha)
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(invalid("time grid values must be finite and >= 0"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("time grid must be nondecreasing"));
    }
    Ok(())
}

/// `θ₀` on a nondecreasing time grid: drift plus compound Poisson jumps with
/// Poisson counts drawn per grid increment.
pub fn sample_subordinator_grid<R: Rng + ?Sized>(c: &Cumulant, t_grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_grid(t_grid)?;
    let rate = c.jump_rate();
    let mut out = Vec::with_capacity(t_grid.len());
    let mut prev = 0.0;
    let mut jumps = 0.0;
    for &t in t_grid {
        let lambda = rate * (t - prev);
        if lambda > 0.0 {
            let count = Poisson::new(lambda).map_err(|e| invalid(e.to_string()))?.sample(rng) as u64;
            for _ in 0..count {
                jumps += c.jump(rng);
            }
        }
        out.push(c.g * t + jumps);
        prev = t;
    }
    Ok(out)
}

/// One draw of `ν₀` and `ξ₀(t) = θ₀(t ν₀)` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Xi0Sample {
    pub nu0: f64,
    pub values: Vec<f64>,
}

/// `ξ₀` on a grid. `ν₀ ~ Exp(1)` comes from `nu_rng` and the subordinator
/// path from `path_rng`, so the two are independent when the streams are.
pub fn sample_xi0<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    c: &Cumulant,
    t_grid: &[f64],
    nu_rng: &mut R1,
    path_rng: &mut R2,
) -> Result<Xi0Sample> {
    check_grid(t_grid)?;
    let nu0: f64 = Exp1.sample(nu_rng);
    let scaled: Vec<f64> = t_grid.iter().map(|t| t * nu0).collect();
    let values = sample_subordinator_grid(c, &scaled, path_rng)?;
    Ok(Xi0Sample { nu0, values })
}
