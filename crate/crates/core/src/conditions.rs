//! Numeric checkers for the convergence conditions over a finite ε-grid, and
//! the π-averaged quantities they are stated in.
//!
//! Asymptotic statements ("→ as ε → 0") are judged by a stabilization proxy
//! on the grid: the successive differences of a statistic must be
//! nonincreasing and the last one small relative to the last value. The proxy
//! never extrapolates, so "inconclusive" is a normal outcome.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    check_ring_ergodicity, stationary_distribution, ProbabilityVector, RingVerdict, StochasticMatrix,
    DEFAULT_RING_THRESHOLD,
};
use crate::error::{invalid, Error, Result};
use crate::levy::Cumulant;
use crate::smp::{self, MarkovRenewalKernel};

/// Relative tolerance of the stabilization proxy.
pub const STABILIZATION_TOL: f64 = 1e-2;
/// Absolute floor below which a statistic counts as zero.
pub const ZERO_FLOOR: f64 = 1e-9;
/// Condition C passes when the conditional tail ends below this value.
pub const C_THRESHOLD: f64 = 0.01;
/// Condition A passes when the largest rare-event probability drops at least
/// by this factor across the grid.
pub const A_DECAY_FACTOR: f64 = 0.1;
/// D1 requires `A(s_min)/A(s_max)` at most this value.
pub const D1_SMALL_S_RATIO: f64 = 0.1;

pub const DEFAULT_CHECK_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const DEFAULT_S_GRID: [f64; 5] = [0.01, 0.1, 0.5, 1.0, 2.0];
pub const DEFAULT_U_GRID: [f64; 3] = [0.25, 0.5, 2.0];
pub const DEFAULT_DELTAS: [f64; 2] = [0.1, 0.5];

type Builder = dyn Fn(f64) -> Result<MarkovRenewalKernel> + Send + Sync;

/// A model family `ε ↦ kernel` declared over a strictly decreasing ε-grid.
#[derive(Clone)]
pub struct EpsilonFamily {
    label: String,
    eps_grid: Vec<f64>,
    builder: Arc<Builder>,
    initial: Option<ProbabilityVector>,
}

impl fmt::Debug for EpsilonFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EpsilonFamily")
            .field("label", &self.label)
            .field("eps_grid", &self.eps_grid)
            .field("initial", &self.initial)
            .finish()
    }
}

pub(crate) fn validate_eps_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("ε-grid is empty"));
    }
    if grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(invalid("ε-grid values must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("ε-grid must be strictly decreasing"));
    }
    Ok(())
}

impl EpsilonFamily {
    /// Build a family and check that every grid point yields a valid kernel.
    pub fn new<F>(label: impl Into<String>, eps_grid: Vec<f64>, builder: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<MarkovRenewalKernel> + Send + Sync + 'static,
    {
        validate_eps_grid(&eps_grid)?;
        let family = Self {
            label: label.into(),
            eps_grid,
            builder: Arc::new(builder),
            initial: None,
        };
        for &eps in &family.eps_grid {
            family.kernel(eps)?;
        }
        Ok(family)
    }

    /// A family that ignores ε.
    pub fn constant(label: impl Into<String>, eps_grid: Vec<f64>, kernel: MarkovRenewalKernel) -> Result<Self> {
        Self::new(label, eps_grid, move |_| Ok(kernel.clone()))
    }

    /// Replace the declared grid.
    pub fn with_grid(mut self, eps_grid: Vec<f64>) -> Result<Self> {
        validate_eps_grid(&eps_grid)?;
        for &eps in &eps_grid {
            self.kernel(eps)?;
        }
        self.eps_grid = eps_grid;
        Ok(self)
    }

    /// Fix the initial distribution (uniform when unset).
    pub fn with_initial(mut self, q: ProbabilityVector) -> Result<Self> {
        let m = self.kernel(self.eps_grid[0])?.m();
        if q.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: q.len() });
        }
        self.initial = Some(q);
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eps_grid(&self) -> &[f64] {
        &self.eps_grid
    }

    pub fn kernel(&self, eps: f64) -> Result<MarkovRenewalKernel> {
        if !(eps > 0.0) {
            return Err(invalid(format!("ε must be positive, got {eps}")));
        }
        (self.builder)(eps)
    }

    /// Initial distribution for a kernel with `m` states.
    pub fn initial(&self, m: usize) -> Result<ProbabilityVector> {
        match &self.initial {
            Some(q) if q.len() == m => Ok(q.clone()),
            Some(q) => Err(Error::DimensionMismatch { expected: m, got: q.len() }),
            None => ProbabilityVector::uniform(m),
        }
    }

    fn kernels(&self) -> Result<Vec<MarkovRenewalKernel>> {
        self.eps_grid.par_iter().map(|&e| self.kernel(e)).collect()
    }
}

/// `p_ε = Σ π_i p_{ε,i}` and `v_ε = 1/p_ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareScale {
    pub p_eps: f64,
    pub v_eps: f64,
}

pub fn averaged_rare_prob(k: &MarkovRenewalKernel) -> Result<RareScale> {
    let pi = stationary_distribution(&k.embedded_matrix())?;
    scale_from(k, &pi)
}

fn scale_from(k: &MarkovRenewalKernel, pi: &ProbabilityVector) -> Result<RareScale> {
    let p = k.rare_event_probs();
    let p_eps: f64 = pi.as_slice().iter().zip(&p.probs).map(|(a, b)| a * b).sum();
    if !(p_eps > 0.0) {
        return Err(Error::DegenerateRareEvent);
    }
    Ok(RareScale { p_eps, v_eps: 1.0 / p_eps })
}

/// Stationary distribution and averaged scale of a kernel.
#[derive(Clone, Debug)]
pub struct Averaged {
    pub pi: ProbabilityVector,
    pub scale: RareScale,
}

impl Averaged {
    pub fn of(k: &MarkovRenewalKernel) -> Result<Self> {
        let pi = stationary_distribution(&k.embedded_matrix())?;
        let scale = scale_from(k, &pi)?;
        Ok(Self { pi, scale })
    }
}

/// `1 − φ_ε(s) = Σ_i π_i Σ_{j,flag} p_{ij,flag} (1 − φ_{ij,flag}(s))`.
pub fn averaged_laplace_complement(k: &MarkovRenewalKernel, pi: &ProbabilityVector, s: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (i, w) in pi.as_slice().iter().enumerate() {
        for (_, _, p, d) in k.outcomes(i) {
            acc += w * p * d.laplace_complement(s)?;
        }
    }
    Ok(acc)
}

/// `A_ε(s) = v_ε (1 − φ_ε(s))`.
pub fn cumulant_eps(k: &MarkovRenewalKernel, s: f64) -> Result<f64> {
    let avg = Averaged::of(k)?;
    Ok(avg.scale.v_eps * averaged_laplace_complement(k, &avg.pi, s)?)
}

/// `v_ε Σ π_i (1 − G_{ε,i}(u))`.
pub fn tail_statistic(k: &MarkovRenewalKernel, avg: &Averaged, u: f64) -> f64 {
    avg.scale.v_eps * mixture_sum(k, &avg.pi, |d| d.tail(u))
}

/// `v_ε Σ π_i ∫_{(0,u]} v dG_{ε,i}(v)`.
pub fn moment_statistic(k: &MarkovRenewalKernel, avg: &Averaged, u: f64) -> f64 {
    avg.scale.v_eps * mixture_sum(k, &avg.pi, |d| d.truncated_mean(u))
}

fn mixture_sum(k: &MarkovRenewalKernel, pi: &ProbabilityVector, f: impl Fn(&crate::dist::SojournDistribution) -> f64) -> f64 {
    let mut acc = 0.0;
    for (i, w) in pi.as_slice().iter().enumerate() {
        for (_, _, p, d) in k.outcomes(i) {
            acc += w * p * f(d);
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionId {
    A,
    B,
    C,
    D1,
    D2,
    G,
}

impl ConditionId {
    pub const ALL: [ConditionId; 6] = [Self::A, Self::B, Self::C, Self::D1, Self::D2, Self::G];
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D1 => "D1",
            Self::D2 => "D2",
            Self::G => "G",
        };
        f.write_str(s)
    }
}

impl FromStr for ConditionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D1" => Ok(Self::D1),
            "D2" => Ok(Self::D2),
            "G" => Ok(Self::G),
            other => Err(invalid(format!("unknown condition '{other}' (expected A, B, C, D1, D2 or G)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Inconclusive => "inconclusive",
        })
    }
}

/// Named scalars recorded at one ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub eps: f64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub grid: Vec<f64>,
    pub diagnostics: Vec<Diagnostic>,
    pub verdict: Verdict,
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sub_verdicts: BTreeMap<String, Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn new(condition: &str, grid: &[f64]) -> Self {
        Self {
            condition: condition.to_string(),
            grid: grid.to_vec(),
            diagnostics: grid
                .iter()
                .map(|&eps| Diagnostic {
                    eps,
                    values: BTreeMap::new(),
                })
                .collect(),
            verdict: Verdict::Inconclusive,
            thresholds: BTreeMap::new(),
            sub_verdicts: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn record(&mut self, idx: usize, name: impl Into<String>, value: f64) {
        self.diagnostics[idx].values.insert(name.into(), value);
    }

    /// Diagnostic `name` along the grid.
    pub fn series(&self, name: &str) -> Vec<Option<f64>> {
        self.diagnostics.iter().map(|d| d.values.get(name).copied()).collect()
    }

    /// Long-format CSV rows: condition, eps, name, value.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for d in &self.diagnostics {
            for (name, value) in &d.values {
                out.write_record([
                    self.condition.as_str(),
                    &d.eps.to_string(),
                    name.as_str(),
                    &value.to_string(),
                ])?;
            }
        }
        Ok(())
    }
}

/// Outcome of the stabilization proxy on one statistic along the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Stabilization {
    Stable { limit: f64 },
    Diverging,
    Unsettled,
}

/// Judge a statistic evaluated along a decreasing ε-grid.
///
/// * stable: successive differences nonincreasing and the last one at most
///   `rel_tol` times the last value (or, for values shrinking to zero, at
///   most `rel_tol` times the largest value);
/// * diverging: values increasing with nondecreasing differences;
/// * unsettled: anything else.
pub fn stabilization(values: &[f64], rel_tol: f64) -> Stabilization {
    if values.len() < 2 || values.iter().any(|v| v.is_nan()) {
        return Stabilization::Unsettled;
    }
    if values.iter().any(|v| v.is_infinite()) {
        return if values.last().is_some_and(|v| *v == f64::INFINITY) {
            Stabilization::Diverging
        } else {
            Stabilization::Unsettled
        };
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let last = *values.last().unwrap();
    let last_diff = *diffs.last().unwrap();
    let shrinking = diffs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
    let peak = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = last.abs().max(ZERO_FLOOR);
    if shrinking && last_diff <= rel_tol * scale {
        return Stabilization::Stable { limit: last };
    }
    if shrinking && last.abs() <= rel_tol * peak && last_diff <= rel_tol * peak {
        return Stabilization::Stable { limit: last };
    }
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let accelerating = diffs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    if increasing && accelerating && last_diff > rel_tol * scale {
        return Stabilization::Diverging;
    }
    Stabilization::Unsettled
}

/// Per-state deterministic reward `f_{ε,i}` as a function of ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reward {
    /// `f_{ε,i} = scale · p_{ε,i}`.
    RareProb { scale: f64 },
    /// `f_{ε,i} = c_i`.
    Constant { values: Vec<f64> },
    /// `f_{ε,i} = ε c_i`.
    EpsScaled { values: Vec<f64> },
}

impl Default for Reward {
    fn default() -> Self {
        Self::RareProb { scale: 1.0 }
    }
}

impl Reward {
    /// `f_{ε,i}` for every state of `k`.
    pub fn values(&self, k: &MarkovRenewalKernel, eps: f64) -> Result<Vec<f64>> {
        let m = k.m();
        let check = |v: &Vec<f64>| -> Result<()> {
            if v.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: v.len() });
            }
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(invalid("reward values must be finite and nonnegative"));
            }
            Ok(())
        };
        match self {
            Self::RareProb { scale } => {
                if !(*scale >= 0.0) || !scale.is_finite() {
                    return Err(invalid(format!("reward scale must be >= 0, got {scale}")));
                }
                Ok(k.rare_event_probs().probs.iter().map(|p| scale * p).collect())
            }
            Self::Constant { values } => {
                check(values)?;
                Ok(values.clone())
            }
            Self::EpsScaled { values } => {
                check(values)?;
                Ok(values.iter().map(|c| eps * c).collect())
            }
        }
    }

    /// `f_ε = v_ε Σ π_i f_{ε,i}`.
    ///
    /// For rare-probability rewards the sum is formed exactly like `p_ε`, so
    /// the ratio is exactly `scale`.
    pub fn averaged(&self, k: &MarkovRenewalKernel, eps: f64, avg: &Averaged) -> Result<f64> {
        let pi = avg.pi.as_slice();
        match self {
            Self::RareProb { scale } => {
                self.values(k, eps)?;
                let p = k.rare_event_probs();
                let same_as_p_eps: f64 = pi.iter().zip(&p.probs).map(|(a, b)| a * b).sum();
                Ok(scale * (same_as_p_eps / avg.scale.p_eps))
            }
            _ => {
                let numerator: f64 = pi.iter().zip(self.values(k, eps)?).map(|(a, b)| a * b).sum();
                Ok(numerator / avg.scale.p_eps)
            }
        }
    }
}

/// Options shared by the condition checkers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub s_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub deltas: Vec<f64>,
    pub ring_threshold: f64,
    pub target: Option<Cumulant>,
    pub reward: Reward,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            s_grid: DEFAULT_S_GRID.to_vec(),
            u_grid: DEFAULT_U_GRID.to_vec(),
            deltas: DEFAULT_DELTAS.to_vec(),
            ring_threshold: DEFAULT_RING_THRESHOLD,
            target: None,
            reward: Reward::default(),
        }
    }
}

/// Condition A: the largest per-state rare-event probability is positive and
/// decays along the grid.
///
/// Pass iff it is positive everywhere, strictly decreasing, and the last value
/// is at most [`A_DECAY_FACTOR`] times the first. Fail iff it vanishes
/// somewhere or does not decrease at all.
pub fn check_condition_a(f: &EpsilonFamily) -> Result<ConditionReport> {
    let grid = f.eps_grid();
    let mut report = ConditionReport::new("A", grid);
    report.thresholds.insert("decay_factor".into(), A_DECAY_FACTOR);
    let kernels = f.kernels()?;
    let maxima: Vec<f64> = kernels.iter().map(|k| k.rare_event_probs().max()).collect();
    for (idx, v) in maxima.iter().enumerate() {
        report.record(idx, "max_p", *v);
    }
    let first = maxima[0];
    let last = *maxima.last().unwrap();
    report.verdict = if maxima.iter().any(|p| *p <= 0.0) || last >= first {
        Verdict::Fail
    } else if maxima.windows(2).all(|w| w[1] < w[0]) && last <= A_DECAY_FACTOR * first {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(report)
}

/// Condition B through the ring-chain search.
pub fn check_condition_b(f: &EpsilonFamily, threshold: f64) -> Result<ConditionReport> {
    let ring = check_ring_ergodicity(f, threshold)?;
    let mut report = ConditionReport::new("B", f.eps_grid());
    report.thresholds.insert("ring_threshold".into(), threshold);
    for (idx, v) in ring.min_edge_prob.iter().enumerate() {
        report.record(idx, "min_edge_prob", *v);
    }
    if let Some(v) = ring.min_stationary {
        report.notes.push(format!("smallest stationary probability over the grid: {v:.6e}"));
    }
    report.verdict = match ring.verdict {
        RingVerdict::Pass => Verdict::Pass,
        RingVerdict::Fail => Verdict::Fail,
    };
    report.notes.push(format!(
        "ring {:?}; bottleneck {:.3e}; the positive lower limit is read as min over the grid >= threshold",
        ring.ring, ring.bottleneck
    ));
    Ok(report)
}

/// Condition C: `P_i{κ > δ | flag} = Σ_j p_{ij,1} (1 − F_{ij1}(δ)) / p_i`.
///
/// Each `(i, δ)` series passes when it is nonincreasing and ends below
/// [`C_THRESHOLD`], and fails when it ends at or above the threshold without
/// having decreased. States that are never flagged are skipped.
pub fn check_condition_c(f: &EpsilonFamily, deltas: &[f64]) -> Result<ConditionReport> {
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(invalid("condition C needs positive δ values"));
    }
    let grid = f.eps_grid();
    let mut report = ConditionReport::new("C", grid);
    report.thresholds.insert("tail_threshold".into(), C_THRESHOLD);
    let kernels = f.kernels()?;
    let m = kernels[0].m();
    let mut verdicts = Vec::new();
    for i in 0..m {
        for &delta in deltas {
            let name = format!("P(kappa>{delta}|flag,i={i})");
            let mut series = Vec::new();
            for (idx, k) in kernels.iter().enumerate() {
                let p_i = k.rare_event_probs().probs[i];
                if p_i <= 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for j in 0..m {
                    let p = k.prob(i, j, 1);
                    if p > 0.0 {
                        acc += p * k.sojourn(i, j, 1).expect("law").tail(delta);
                    }
                }
                let value = (acc / p_i).min(1.0);
                report.record(idx, name.clone(), value);
                series.push(value);
            }
            if series.is_empty() {
                continue;
            }
            let first = series[0];
            let last = *series.last().unwrap();
            let nonincreasing = series.windows(2).all(|w| w[1] <= w[0] + 1e-15);
            verdicts.push(if last < C_THRESHOLD && nonincreasing {
                Verdict::Pass
            } else if last >= C_THRESHOLD && last >= first * (1.0 - 1e-9) {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            });
        }
    }
    report.verdict = combine(&verdicts);
    Ok(report)
}

fn combine(verdicts: &[Verdict]) -> Verdict {
    if verdicts.is_empty() {
        Verdict::Inconclusive
    } else if verdicts.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if verdicts.iter().all(|v| *v == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    }
}

fn describe(s: &Stabilization) -> String {
    match s {
        Stabilization::Stable { limit } => format!("stable, limit ≈ {limit:.6e}"),
        Stabilization::Unsettled => "unsettled".into(),
        Stabilization::Diverging => "diverging".into(),
    }
}

/// Condition D1: `A_ε(s) = v_ε (1 − φ_ε(s))` stabilizes for every `s`.
///
/// Pass iff every `s` is stable with a positive limit and the limits vanish
/// towards small `s` (`A(s_min)/A(s_max) ≤` [`D1_SMALL_S_RATIO`]). Fail iff
/// some `s` diverges, some limit is zero, or the small-`s` ratio is violated.
pub fn check_condition_d1(f: &EpsilonFamily, s_grid: &[f64], target: Option<&Cumulant>) -> Result<ConditionReport> {
    if s_grid.is_empty() || s_grid.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("condition D1 needs positive s values"));
    }
    let grid = f.eps_grid();
    let mut report = ConditionReport::new("D1", grid);
    report.thresholds.insert("rel_tol".into(), STABILIZATION_TOL);
    report.thresholds.insert("small_s_ratio".into(), D1_SMALL_S_RATIO);
    let kernels = f.kernels()?;
    let table: Vec<Vec<f64>> = kernels
        .par_iter()
        .map(|k| {
            let avg = Averaged::of(k)?;
            s_grid
                .iter()
                .map(|&s| Ok(avg.scale.v_eps * averaged_laplace_complement(k, &avg.pi, s)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut limits = Vec::new();
    let mut verdicts = Vec::new();
    for (si, &s) in s_grid.iter().enumerate() {
        let series: Vec<f64> = table.iter().map(|row| row[si]).collect();
        for (idx, v) in series.iter().enumerate() {
            report.record(idx, format!("A_eps(s={s})"), *v);
            if let Some(c) = target {
                report.record(idx, format!("|A_eps-A|(s={s})"), (v - c.eval(s)).abs());
            }
        }
        let st = stabilization(&series, STABILIZATION_TOL);
        report.notes.push(format!("s={s}: {}", describe(&st)));
        match st {
            Stabilization::Stable { limit } if limit > ZERO_FLOOR => {
                limits.push((s, limit));
                verdicts.push(Verdict::Pass);
            }
            Stabilization::Stable { .. } | Stabilization::Diverging => verdicts.push(Verdict::Fail),
            Stabilization::Unsettled => verdicts.push(Verdict::Inconclusive),
        }
    }
    let mut verdict = combine(&verdicts);
    if verdict == Verdict::Pass && s_grid.len() >= 2 {
        let lo = limits.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;
        let hi = limits.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;
        if lo / hi > D1_SMALL_S_RATIO {
            verdict = Verdict::Fail;
            report.notes.push(format!("A(s_min)/A(s_max) = {:.3} does not vanish towards s = 0", lo / hi));
        }
    }
    report.verdict = verdict;
    Ok(report)
}

/// Condition D2: tail and truncated-moment statistics stabilize for every `u`.
///
/// A `u` whose tail statistic is unsettled may be a discontinuity of the limit
/// and is excluded from the verdict (and noted). Fail iff a retained
/// statistic diverges or every statistic vanishes (degenerate limit).
pub fn check_condition_d2(f: &EpsilonFamily, u_grid: &[f64]) -> Result<ConditionReport> {
    if u_grid.is_empty() || u_grid.iter().any(|u| !(*u > 0.0)) {
        return Err(invalid("condition D2 needs positive u values"));
    }
    let grid = f.eps_grid();
    let mut report = ConditionReport::new("D2", grid);
    report.thresholds.insert("rel_tol".into(), STABILIZATION_TOL);
    report.thresholds.insert("zero_floor".into(), ZERO_FLOOR);
    let kernels = f.kernels()?;
    let table: Vec<Vec<(f64, f64)>> = kernels
        .par_iter()
        .map(|k| {
            let avg = Averaged::of(k)?;
            Ok(u_grid
                .iter()
                .map(|&u| (tail_statistic(k, &avg, u), moment_statistic(k, &avg, u)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut verdicts = Vec::new();
    let mut finals = Vec::new();
    for (ui, &u) in u_grid.iter().enumerate() {
        let tail: Vec<f64> = table.iter().map(|row| row[ui].0).collect();
        let moment: Vec<f64> = table.iter().map(|row| row[ui].1).collect();
        for idx in 0..grid.len() {
            report.record(idx, format!("tail(u={u})"), tail[idx]);
            report.record(idx, format!("moment(u={u})"), moment[idx]);
        }
        finals.push(*tail.last().unwrap());
        finals.push(*moment.last().unwrap());
        let st_tail = stabilization(&tail, STABILIZATION_TOL);
        let st_moment = stabilization(&moment, STABILIZATION_TOL);
        if st_tail == Stabilization::Unsettled {
            report.notes.push(format!("u={u}: tail statistic jumps across ε; possible discontinuity of the limit, excluded"));
            continue;
        }
        for st in [st_tail, st_moment] {
            verdicts.push(match st {
                Stabilization::Stable { .. } => Verdict::Pass,
                Stabilization::Diverging => Verdict::Fail,
                Stabilization::Unsettled => Verdict::Inconclusive,
            });
        }
    }
    report.verdict = if finals.iter().all(|v| v.abs() <= ZERO_FLOOR) {
        report.notes.push("all statistics vanish: the limit would be degenerate at zero".into());
        Verdict::Fail
    } else {
        combine(&verdicts)
    };
    Ok(report)
}

/// Conditions G, H and I for a deterministic reward through
/// `f_ε = v_ε Σ π_i f_{ε,i}`.
///
/// G: stabilizes to a positive finite limit. I: stabilizes or diverges to
/// `+∞`. H: `f_ε > 0` at every grid point. The report verdict is G.
pub fn check_condition_g(f: &EpsilonFamily, reward: &Reward) -> Result<ConditionReport> {
    let grid = f.eps_grid();
    let mut report = ConditionReport::new("G", grid);
    report.thresholds.insert("rel_tol".into(), STABILIZATION_TOL);
    let kernels = f.kernels()?;
    let mut series = Vec::new();
    for (idx, (k, &eps)) in kernels.iter().zip(grid).enumerate() {
        let avg = Averaged::of(k)?;
        let value = reward.averaged(k, eps, &avg)?;
        report.record(idx, "f_eps", value);
        series.push(value);
    }
    let st = stabilization(&series, STABILIZATION_TOL);
    let g = match st {
        Stabilization::Stable { limit } if limit > ZERO_FLOOR && limit.is_finite() => Verdict::Pass,
        Stabilization::Unsettled => Verdict::Inconclusive,
        _ => Verdict::Fail,
    };
    let i = match st {
        Stabilization::Stable { .. } | Stabilization::Diverging => Verdict::Pass,
        Stabilization::Unsettled => Verdict::Inconclusive,
    };
    let h = if series.iter().all(|v| *v > 0.0) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    if let Stabilization::Stable { limit } = st {
        report.notes.push(format!("f_0 ≈ {limit}"));
    } else if st == Stabilization::Diverging {
        report.notes.push("f_0 = +∞".into());
    }
    report.sub_verdicts.insert("G".into(), g);
    report.sub_verdicts.insert("H".into(), h);
    report.sub_verdicts.insert("I".into(), i);
    report.verdict = g;
    Ok(report)
}

/// Run the requested checkers in the given order.
pub fn check_conditions(f: &EpsilonFamily, which: &[ConditionId], opts: &CheckOptions) -> Result<Vec<ConditionReport>> {
    which
        .iter()
        .map(|c| match c {
            ConditionId::A => check_condition_a(f),
            ConditionId::B => check_condition_b(f, opts.ring_threshold),
            ConditionId::C => check_condition_c(f, &opts.deltas),
            ConditionId::D1 => check_condition_d1(f, &opts.s_grid, opts.target.as_ref()),
            ConditionId::D2 => check_condition_d2(f, &opts.u_grid),
            ConditionId::G => check_condition_g(f, &opts.reward),
        })
        .collect()
}

/// Sampler for `θ_ε = Σ_{n≤⌊v_ε⌋} θ_{ε,n}` with `θ_{ε,n}` i.i.d. from the
/// π-averaged sojourn mixture `G_ε`.
#[derive(Clone, Debug)]
pub struct ThetaSampler {
    kernel: MarkovRenewalKernel,
    weights: Vec<f64>,
    count: u64,
}

impl ThetaSampler {
    pub fn new(f: &EpsilonFamily, eps: f64) -> Result<Self> {
        let kernel = f.kernel(eps)?;
        let avg = Averaged::of(&kernel)?;
        Ok(Self {
            weights: avg.pi.as_slice().to_vec(),
            count: avg.scale.v_eps.floor() as u64,
            kernel,
        })
    }

    /// Number of summands `⌊v_ε⌋`.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        smp::sample_exit_mixture_sum(&self.kernel, &self.weights, self.count, rng)
    }
}

pub fn sample_theta_eps<R: Rng + ?Sized>(f: &EpsilonFamily, eps: f64, rng: &mut R) -> Result<f64> {
    Ok(ThetaSampler::new(f, eps)?.sample(rng))
}

/// Embedded chain conditioned on no rare event: `p̃_{ij} = p_{ij,0} / (1 − p_i)`.
pub fn tilted_survival_matrix(k: &MarkovRenewalKernel) -> Result<StochasticMatrix> {
    let p = k.rare_event_probs();
    let m = k.m();
    let rows = (0..m)
        .map(|i| {
            let stay = 1.0 - p.probs[i];
            if !(stay > 0.0) {
                return Err(invalid(format!("state {i} always raises the rare event")));
            }
            let mut row: Vec<f64> = (0..m).map(|j| k.prob(i, j, 0) / stay).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    StochasticMatrix::from_rows(rows)
}

/// `max_{ij} |a_{ij} − b_{ij}|`.
pub fn matrix_closeness(a: &StochasticMatrix, b: &StochasticMatrix) -> Result<f64> {
    if a.m() != b.m() {
        return Err(Error::DimensionMismatch { expected: a.m(), got: b.m() });
    }
    let m = a.m();
    Ok((0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| (a.get(i, j) - b.get(i, j)).abs())
        .fold(0.0, f64::max))
}

/// Largest entrywise difference of the embedded matrices of two kernels.
pub fn kernel_closeness(a: &MarkovRenewalKernel, b: &MarkovRenewalKernel) -> Result<f64> {
    matrix_closeness(&a.embedded_matrix(), &b.embedded_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SojournDistribution;
    use crate::rng::StreamKey;

    fn single(flag: f64, law: impl Fn(usize) -> SojournDistribution) -> MarkovRenewalKernel {
        let p = StochasticMatrix::from_rows(vec![vec![1.0]]).unwrap();
        MarkovRenewalKernel::with_independent_flags(&p, &[flag], |_, fl| law(fl)).unwrap()
    }

    fn grid() -> Vec<f64> {
        DEFAULT_CHECK_GRID.to_vec()
    }

    fn drift() -> EpsilonFamily {
        EpsilonFamily::new("drift", grid(), |e| Ok(single(e, |_| SojournDistribution::exponential(e).unwrap()))).unwrap()
    }

    fn geometric() -> EpsilonFamily {
        EpsilonFamily::new("geometric", grid(), |e| Ok(single(e, |_| SojournDistribution::atom(1.0, e).unwrap()))).unwrap()
    }

    fn two_state_kernel(e: f64) -> MarkovRenewalKernel {
        let p = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.7, 0.3]]).unwrap();
        MarkovRenewalKernel::with_independent_flags(&p, &[e, 2.0 * e], |i, _| {
            if i == 0 {
                SojournDistribution::exponential(e).unwrap()
            } else {
                SojournDistribution::exponential(2.0 * e).unwrap()
            }
        })
        .unwrap()
    }

    #[test]
    fn averaged_probabilities() {
        let k = single(0.01, |_| SojournDistribution::exponential(1.0).unwrap());
        let r = averaged_rare_prob(&k).unwrap();
        assert_eq!(r.p_eps, 0.01);
        assert_eq!(r.v_eps, 100.0);
        let eps = 1e-3;
        let r = averaged_rare_prob(&two_state_kernel(eps)).unwrap();
        assert!((r.p_eps - 17.0 / 12.0 * eps).abs() < 1e-15);
        let k = single(0.0, |_| SojournDistribution::exponential(1.0).unwrap());
        assert!(matches!(averaged_rare_prob(&k), Err(Error::DegenerateRareEvent)));
    }

    #[test]
    fn condition_a_cases() {
        assert_eq!(check_condition_a(&drift()).unwrap().verdict, Verdict::Pass);
        let flat = EpsilonFamily::new("flat", grid(), |_| Ok(single(0.3, |_| SojournDistribution::exponential(0.3).unwrap()))).unwrap();
        assert_eq!(check_condition_a(&flat).unwrap().verdict, Verdict::Fail);
        let root = EpsilonFamily::new("root", grid(), |e| {
            let p = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
            MarkovRenewalKernel::with_independent_flags(&p, &[e, e.sqrt()], |_, _| SojournDistribution::exponential(e).unwrap())
        })
        .unwrap();
        let report = check_condition_a(&root).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        for (v, e) in report.series("max_p").iter().zip(grid()) {
            assert!((v.unwrap() - e.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn condition_c_cases() {
        let zero = EpsilonFamily::new("zero", grid(), |e| {
            Ok(single(e, |fl| {
                if fl == 1 {
                    SojournDistribution::deterministic(0.0).unwrap()
                } else {
                    SojournDistribution::exponential(e).unwrap()
                }
            }))
        })
        .unwrap();
        let r = check_condition_c(&zero, &DEFAULT_DELTAS).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.diagnostics.iter().all(|d| d.values.values().all(|v| *v == 0.0)));
        let r = check_condition_c(&drift(), &DEFAULT_DELTAS).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let series = r.series("P(kappa>0.1|flag,i=0)");
        for (v, e) in series.iter().zip(grid()) {
            assert!((v.unwrap() - (-0.1 / e).exp()).abs() < 1e-15);
        }
        let fat = EpsilonFamily::new("fat", grid(), |e| {
            Ok(single(e, |fl| {
                if fl == 1 {
                    SojournDistribution::deterministic(1.0).unwrap()
                } else {
                    SojournDistribution::exponential(e).unwrap()
                }
            }))
        })
        .unwrap();
        assert_eq!(check_condition_c(&fat, &DEFAULT_DELTAS).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn d1_drift_bound_and_target() {
        let target = Cumulant::drift(1.0).unwrap();
        let r = check_condition_d1(&drift(), &DEFAULT_S_GRID, Some(&target)).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        for d in &r.diagnostics {
            for s in DEFAULT_S_GRID {
                let a = d.values[&format!("A_eps(s={s})")];
                // v_ε(1 − 1/(1+εs)) = s/(1+εs)
                assert!((a - s / (1.0 + d.eps * s)).abs() < 1e-12);
                assert!((a - s).abs() <= s * s * d.eps);
            }
        }
    }

    #[test]
    fn d1_geometric_is_exact_and_unscaled_diverges() {
        let r = check_condition_d1(&geometric(), &DEFAULT_S_GRID, None).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        for d in &r.diagnostics {
            assert!((d.values["A_eps(s=1)"] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        }
        let unscaled = EpsilonFamily::new("u", grid(), |e| Ok(single(e, |_| SojournDistribution::deterministic(1.0).unwrap()))).unwrap();
        assert_eq!(check_condition_d1(&unscaled, &DEFAULT_S_GRID, None).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn d2_statistics() {
        let r = check_condition_d2(&drift(), &[1.0]).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        for d in &r.diagnostics {
            let e = d.eps;
            assert!((d.values["tail(u=1)"] - (-1.0 / e).exp() / e).abs() < 1e-12);
            let r = 1.0 / e;
            assert!((d.values["moment(u=1)"] - (1.0 - (-r).exp() * (1.0 + r))).abs() < 1e-12);
        }
        let r = check_condition_d2(&geometric(), &[0.5]).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        for d in &r.diagnostics {
            assert!((d.values["tail(u=0.5)"] - 1.0).abs() < 1e-12);
            assert_eq!(d.values["moment(u=0.5)"], 0.0);
        }
        let zero = EpsilonFamily::new("z", grid(), |e| Ok(single(e, |_| SojournDistribution::deterministic(0.0).unwrap()))).unwrap();
        assert_eq!(check_condition_d2(&zero, &DEFAULT_U_GRID).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn reward_statistics() {
        let two = EpsilonFamily::new("two", grid(), |e| Ok(two_state_kernel(e))).unwrap();
        let r = check_condition_g(&two, &Reward::RareProb { scale: 1.0 }).unwrap();
        assert!(r.series("f_eps").iter().all(|v| v.unwrap() == 1.0));
        assert_eq!(r.sub_verdicts["G"], Verdict::Pass);
        let r = check_condition_g(&two, &Reward::Constant { values: vec![1.0, 1.0] }).unwrap();
        assert_eq!(r.sub_verdicts["G"], Verdict::Fail);
        assert_eq!(r.sub_verdicts["I"], Verdict::Pass);
        assert_eq!(r.sub_verdicts["H"], Verdict::Pass);
        // f_ε = (Σ π_i c_i ε) / (Σ π_i p_i) with π = (7/12, 5/12), p = (ε, 2ε)
        let c = [3.0, 1.0];
        let r = check_condition_g(&two, &Reward::EpsScaled { values: c.to_vec() }).unwrap();
        let hand = (7.0 / 12.0 * c[0] + 5.0 / 12.0 * c[1]) / (17.0 / 12.0);
        for v in r.series("f_eps") {
            assert!((v.unwrap() - hand).abs() < 1e-12);
        }
        assert_eq!(r.verdict, Verdict::Pass);
        let r = check_condition_g(&two, &Reward::Constant { values: vec![0.0, 0.0] }).unwrap();
        assert_eq!(r.sub_verdicts["H"], Verdict::Fail);
    }

    #[test]
    fn stabilization_cases() {
        assert!(matches!(stabilization(&[1.0, 1.0, 1.0], 1e-2), Stabilization::Stable { limit } if limit == 1.0));
        assert_eq!(stabilization(&[10.0, 100.0, 1000.0], 1e-2), Stabilization::Diverging);
        assert_eq!(stabilization(&[1.0, 2.0, 1.0, 2.0], 1e-2), Stabilization::Unsettled);
        assert!(matches!(stabilization(&[0.1, 0.01, 1e-3, 1e-4], 1e-2), Stabilization::Stable { .. }));
        assert_eq!(stabilization(&[1.0], 1e-2), Stabilization::Unsettled);
    }

    #[test]
    fn theta_sampler_mean() {
        let f = drift();
        let eps = 1e-2;
        let sampler = ThetaSampler::new(&f, eps).unwrap();
        assert_eq!(sampler.count(), 100);
        let key = StreamKey::new(5);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|r| sampler.sample(&mut key.stream(r))).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 100.0 * eps).abs() < 3.0 * sd / (n as f64).sqrt());
        let s = 1.0;
        let ys: Vec<f64> = draws.iter().map(|x| (-s * x).exp()).collect();
        let m = ys.iter().sum::<f64>() / n as f64;
        let se = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        let phi: f64 = 1.0 / (1.0 + eps * s);
        assert!((m - phi.powi(100)).abs() < 3.0 * se);
        let every_step = EpsilonFamily::new("always", vec![0.5], |_| Ok(single(1.0, |_| SojournDistribution::exponential(1.0).unwrap()))).unwrap();
        assert_eq!(ThetaSampler::new(&every_step, 0.5).unwrap().count(), 1);
    }

    #[test]
    fn tilted_chain_closeness() {
        let eps = 1e-3;
        let k = two_state_kernel(eps);
        let tilted = tilted_survival_matrix(&k).unwrap();
        let gap = matrix_closeness(&tilted, &k.embedded_matrix()).unwrap();
        let p = k.rare_event_probs();
        let bound = p.probs.iter().map(|pi| 2.0 * pi / (1.0 - pi)).fold(0.0, f64::max);
        assert!(gap <= bound);
        assert_eq!(kernel_closeness(&k, &k).unwrap(), 0.0);
        let a = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.7, 0.3]]).unwrap();
        let b = StochasticMatrix::from_rows(vec![vec![0.55, 0.45], vec![0.7, 0.3]]).unwrap();
        assert!((matrix_closeness(&a, &b).unwrap() - 0.05).abs() < 1e-15);
        let c = StochasticMatrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!(matches!(matrix_closeness(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn report_json_fields() {
        let r = check_condition_a(&drift()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["condition", "grid", "diagnostics", "verdict", "thresholds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["verdict"], "pass");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn cumulant_eps_nondecreasing(e in 1e-4..0.2f64, s in 0.01..5.0f64) {
                let k = two_state_kernel(e);
                let a = cumulant_eps(&k, s).unwrap();
                let b = cumulant_eps(&k, s * 1.5).unwrap();
                prop_assert!(a >= 0.0 && b >= a);
            }

            #[test]
            fn rare_prob_reward_is_exactly_scale(e in 1e-5..0.3f64, scale in 0.1..10.0f64) {
                let k = two_state_kernel(e);
                let avg = Averaged::of(&k).unwrap();
                let f = Reward::RareProb { scale }.averaged(&k, e, &avg).unwrap();
                prop_assert_eq!(f, scale);
            }
        }
    }
}
