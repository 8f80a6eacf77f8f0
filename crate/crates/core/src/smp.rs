//! The Markov renewal model: kernel, path simulation, first-rare-event
//! functionals and step-sum reward processes.
//!
//! A kernel stores, for every state `i`, the joint law `p_{ij,flag}` of the
//! next state and the flag together with the conditional sojourn law of the
//! step given `(i, j, flag)`.
//!
//! First-rare-event sampling works on a run-length encoding of the step
//! sequence. Unflagged self-transitions of a state form geometric runs whose
//! sojourns are i.i.d., so a run of `K` steps is drawn as one geometric count
//! and its sojourn sum is drawn in closed form where the law allows it. The
//! resulting samples have exactly the law of the step-by-step process.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric};
use serde::{Deserialize, Serialize};

use crate::chain::{self, ProbabilityVector, StochasticMatrix, SUM_TOL};
use crate::dist::SojournDistribution;
use crate::error::{invalid, Error, Result};

/// Upper limit for the default step budget of rare-event loops.
pub const MAX_STEPS_CAP: u64 = 1_000_000_000;

/// Default step budget given the time scale `v_ε = 1/p_ε`.
pub fn default_max_steps(v_eps: f64) -> u64 {
    let scaled = (1000.0 * v_eps).max(1e6);
    if scaled.is_finite() {
        (scaled as u64).min(MAX_STEPS_CAP)
    } else {
        MAX_STEPS_CAP
    }
}

#[derive(Clone, Copy, Debug)]
struct Outcome {
    cum: f64,
    j: usize,
    flag: usize,
}

/// Per-state sampling tables derived from the joint probabilities.
#[derive(Clone, Debug)]
struct StateTable {
    /// All outcomes with positive probability, cumulative.
    all: Vec<Outcome>,
    /// Probability of an unflagged self-transition.
    stay: f64,
    /// Length law of a run of unflagged self-transitions, when `0 < stay < 1`.
    run_length: Option<Geometric>,
    /// Outcomes other than the unflagged self-transition, cumulative and
    /// normalized by `1 − stay`.
    exits: Vec<Outcome>,
}

fn pick(table: &[Outcome], u: f64) -> Outcome {
    table
        .iter()
        .find(|o| u < o.cum)
        .or_else(|| table.last())
        .copied()
        .expect("nonempty outcome table")
}

/// Joint law of `(next state, flag, sojourn)` for every state.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct MarkovRenewalKernel {
    m: usize,
    /// `p_{ij,flag}` at index `(i*m + j)*2 + flag`.
    probs: Vec<f64>,
    sojourn: Vec<Option<SojournDistribution>>,
    tables: Vec<StateTable>,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    m: usize,
    joint_probs: Vec<Vec<[f64; 2]>>,
    sojourn: BTreeMap<String, SojournDistribution>,
}

impl TryFrom<KernelRepr> for MarkovRenewalKernel {
    type Error = Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        if r.joint_probs.len() != r.m {
            return Err(Error::DimensionMismatch {
                expected: r.m,
                got: r.joint_probs.len(),
            });
        }
        let mut sojourn = BTreeMap::new();
        for (key, d) in r.sojourn {
            let parts: Vec<usize> = key
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("sojourn key '{key}' is not \"i,j,flag\"")))?;
            match parts.as_slice() {
                [i, j, flag] if *flag <= 1 => {
                    sojourn.insert((*i, *j, *flag), d);
                }
                _ => return Err(Error::Config(format!("sojourn key '{key}' is not \"i,j,flag\""))),
            }
        }
        MarkovRenewalKernel::new(r.joint_probs, sojourn)
    }
}

impl From<MarkovRenewalKernel> for KernelRepr {
    fn from(k: MarkovRenewalKernel) -> Self {
        let m = k.m;
        let joint_probs = (0..m)
            .map(|i| (0..m).map(|j| [k.prob(i, j, 0), k.prob(i, j, 1)]).collect())
            .collect();
        let mut sojourn = BTreeMap::new();
        for i in 0..m {
            for j in 0..m {
                for flag in 0..2 {
                    if let Some(d) = k.sojourn(i, j, flag) {
                        sojourn.insert(format!("{i},{j},{flag}"), d.clone());
                    }
                }
            }
        }
        KernelRepr {
            m,
            joint_probs,
            sojourn,
        }
    }
}

impl PartialEq for MarkovRenewalKernel {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.probs == other.probs && self.sojourn == other.sojourn
    }
}

impl MarkovRenewalKernel {
    /// Build a kernel from `joint_probs[i][j] = [p_{ij,0}, p_{ij,1}]` and the
    /// conditional sojourn laws keyed by `(i, j, flag)`.
    ///
    /// Every transition with positive probability needs a sojourn law.
    pub fn new(
        joint_probs: Vec<Vec<[f64; 2]>>,
        sojourn: BTreeMap<(usize, usize, usize), SojournDistribution>,
    ) -> Result<Self> {
        let m = joint_probs.len();
        if m == 0 {
            return Err(invalid("kernel needs at least one state"));
        }
        let mut probs = vec![0.0; m * m * 2];
        for (i, row) in joint_probs.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            for (j, pair) in row.iter().enumerate() {
                for flag in 0..2 {
                    let p = pair[flag];
                    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                        return Err(invalid(format!("p[{i},{j},{flag}] = {p} is not a probability")));
                    }
                    probs[(i * m + j) * 2 + flag] = p;
                }
            }
            let total: f64 = row.iter().map(|p| p[0] + p[1]).sum();
            if (total - 1.0).abs() > SUM_TOL {
                return Err(invalid(format!("row {i} of the joint law sums to {total}")));
            }
        }
        let mut slots = vec![None; m * m * 2];
        for ((i, j, flag), d) in sojourn {
            if i >= m || j >= m {
                return Err(Error::StateOutOfRange { state: i.max(j), m });
            }
            if flag > 1 {
                return Err(invalid(format!("flag must be 0 or 1, got {flag}")));
            }
            d.validate()?;
            slots[(i * m + j) * 2 + flag] = Some(d);
        }
        for (idx, p) in probs.iter().enumerate() {
            if *p > 0.0 && slots[idx].is_none() {
                let (i, j, flag) = (idx / (2 * m), (idx / 2) % m, idx % 2);
                return Err(invalid(format!("transition ({i},{j},{flag}) has no sojourn law")));
            }
        }
        let tables = (0..m).map(|i| build_table(m, &probs, i)).collect();
        Ok(Self {
            m,
            probs,
            sojourn: slots,
            tables,
        })
    }

    /// Kernel whose sojourn law depends only on the current state and the flag.
    ///
    /// `p` is the embedded matrix, `flag_probs[i]` the probability that a step
    /// out of `i` is flagged (independently of the next state), and
    /// `sojourn(i, flag)` the sojourn law.
    pub fn with_independent_flags(
        p: &StochasticMatrix,
        flag_probs: &[f64],
        sojourn: impl Fn(usize, usize) -> SojournDistribution,
    ) -> Result<Self> {
        let m = p.m();
        if flag_probs.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: flag_probs.len(),
            });
        }
        let mut joint = vec![vec![[0.0; 2]; m]; m];
        let mut laws = BTreeMap::new();
        for i in 0..m {
            let f = flag_probs[i];
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("flag probability {f} out of [0,1]")));
            }
            for j in 0..m {
                let pij = p.get(i, j);
                joint[i][j] = [pij * (1.0 - f), pij * f];
                for flag in 0..2 {
                    if joint[i][j][flag] > 0.0 {
                        laws.insert((i, j, flag), sojourn(i, flag));
                    }
                }
            }
            // keep the row exactly stochastic after the split
            let total: f64 = joint[i].iter().map(|x| x[0] + x[1]).sum();
            if (total - 1.0).abs() > SUM_TOL {
                return Err(invalid(format!("row {i} sums to {total} after splitting flags")));
            }
        }
        Self::new(joint, laws)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `p_{ij,flag}`.
    pub fn prob(&self, i: usize, j: usize, flag: usize) -> f64 {
        self.probs[(i * self.m + j) * 2 + flag]
    }

    /// Conditional sojourn law of a step `(i, j, flag)`, if one is set.
    pub fn sojourn(&self, i: usize, j: usize, flag: usize) -> Option<&SojournDistribution> {
        self.sojourn[(i * self.m + j) * 2 + flag].as_ref()
    }

    /// Outcomes `(j, flag, p_{ij,flag}, law)` of state `i` with positive probability.
    pub fn outcomes(&self, i: usize) -> impl Iterator<Item = (usize, usize, f64, &SojournDistribution)> + '_ {
        (0..self.m).flat_map(move |j| (0..2).map(move |flag| (j, flag))).filter_map(move |(j, flag)| {
            let p = self.prob(i, j, flag);
            if p > 0.0 {
                self.sojourn(i, j, flag).map(|d| (j, flag, p, d))
            } else {
                None
            }
        })
    }

    /// Embedded matrix `p_{ij} = p_{ij,0} + p_{ij,1}`.
    pub fn embedded_matrix(&self) -> StochasticMatrix {
        let m = self.m;
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut row: Vec<f64> = (0..m).map(|j| self.prob(i, j, 0) + self.prob(i, j, 1)).collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= sum);
                row
            })
            .collect();
        StochasticMatrix::from_rows(rows).expect("kernel rows are stochastic")
    }

    /// Per-state rare-event probabilities `p_i = Σ_j p_{ij,1}`.
    pub fn rare_event_probs(&self) -> RareEventProbs {
        RareEventProbs {
            probs: (0..self.m)
                .map(|i| (0..self.m).map(|j| self.prob(i, j, 1)).sum::<f64>().min(1.0))
                .collect(),
        }
    }

    /// Substochastic survival matrix `M_{ij} = p_{ij,0}` in row-major order.
    pub fn survival_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|i| (0..self.m).map(|j| self.prob(i, j, 0)).collect())
            .collect()
    }

    fn check_initial(&self, q: &ProbabilityVector) -> Result<()> {
        if q.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: q.len(),
            });
        }
        Ok(())
    }
}

fn build_table(m: usize, probs: &[f64], i: usize) -> StateTable {
    let mut all = Vec::new();
    let mut exits = Vec::new();
    let mut acc = 0.0;
    let mut exit_acc = 0.0;
    let mut stay = 0.0;
    for j in 0..m {
        for flag in 0..2 {
            let p = probs[(i * m + j) * 2 + flag];
            if p <= 0.0 {
                continue;
            }
            acc += p;
            all.push(Outcome { cum: acc, j, flag });
            if j == i && flag == 0 {
                stay = p;
            } else {
                exit_acc += p;
                exits.push(Outcome { cum: exit_acc, j, flag });
            }
        }
    }
    if let Some(last) = all.last_mut() {
        last.cum = f64::INFINITY;
    }
    for o in &mut exits {
        o.cum /= exit_acc;
    }
    if let Some(last) = exits.last_mut() {
        last.cum = f64::INFINITY;
    }
    let run_length = if stay > 0.0 && stay < 1.0 {
        Geometric::new(1.0 - stay).ok()
    } else {
        None
    };
    StateTable {
        all,
        stay,
        run_length,
        exits,
    }
}

fn draw_initial<R: Rng + ?Sized>(q: &ProbabilityVector, rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let probs = q.as_slice();
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Per-state probabilities of the rare event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareEventProbs {
    pub probs: Vec<f64>,
}

impl RareEventProbs {
    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

/// One trajectory `η_0..η_n` with sojourns, flags and jump moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub states: Vec<usize>,
    /// `κ_1..κ_n`.
    pub sojourns: Vec<f64>,
    /// `ζ_1..ζ_n`.
    pub flags: Vec<u8>,
    /// `τ_0..τ_n`, with `τ_0 = 0`.
    pub jump_moments: Vec<f64>,
}

impl PathSample {
    pub fn steps(&self) -> usize {
        self.sojourns.len()
    }
}

/// One realization of the first-rare-event functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstRareEventSample {
    pub nu: u64,
    pub xi: f64,
    pub last_sojourn: f64,
    /// `ξ_ε(t)` on the requested grid, in grid order.
    pub xi_grid: Option<Vec<f64>>,
}

/// Step-by-step simulation of `n_steps` transitions.
pub fn simulate_path<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    n_steps: usize,
    rng: &mut R,
) -> Result<PathSample> {
    k.check_initial(q)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut sojourns = Vec::with_capacity(n_steps);
    let mut flags = Vec::with_capacity(n_steps);
    let mut jump_moments = Vec::with_capacity(n_steps + 1);
    let mut state = draw_initial(q, rng);
    let mut clock = 0.0;
    states.push(state);
    jump_moments.push(0.0);
    for _ in 0..n_steps {
        let o = pick(&k.tables[state].all, rng.random::<f64>());
        let kappa = k
            .sojourn(state, o.j, o.flag)
            .expect("positive transitions carry a law")
            .sample(rng);
        clock += kappa;
        state = o.j;
        states.push(state);
        sojourns.push(kappa);
        flags.push(o.flag as u8);
        jump_moments.push(clock);
    }
    Ok(PathSample {
        states,
        sojourns,
        flags,
        jump_moments,
    })
}

/// A block of consecutive steps sharing one sojourn law.
#[derive(Clone, Copy, Debug)]
struct Segment {
    state: usize,
    j: usize,
    flag: usize,
    count: u64,
}

/// Run-length encoded step sequence until the first flag (and, when
/// `extra_until > ν`, continued to at least `extra_until` steps).
struct Runs {
    segments: Vec<Segment>,
    nu: u64,
}

fn sample_runs<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    max_steps: u64,
    horizon: impl Fn(u64) -> u64,
    rng: &mut R,
) -> Result<Runs> {
    k.check_initial(q)?;
    if max_steps == 0 {
        return Err(invalid("max_steps must be at least 1"));
    }
    let mut segments = Vec::new();
    let mut state = draw_initial(q, rng);
    let mut steps: u64 = 0;
    let mut nu: Option<u64> = None;
    loop {
        if let Some(n) = nu {
            if steps >= horizon(n) {
                break;
            }
        }
        let table = &k.tables[state];
        if table.stay > 0.0 {
            if table.stay >= 1.0 {
                if nu.is_none() {
                    return Err(Error::MaxStepsExceeded { max_steps });
                }
                // absorbed without further flags: the remaining horizon is one run
                let need = horizon(nu.unwrap()) - steps;
                segments.push(Segment {
                    state,
                    j: state,
                    flag: 0,
                    count: need,
                });
                steps += need;
                continue;
            }
            let stays = table.run_length.expect("stay probability in (0,1)").sample(rng);
            if nu.is_none() && steps.saturating_add(stays) >= max_steps {
                return Err(Error::MaxStepsExceeded { max_steps });
            }
            if stays > 0 {
                segments.push(Segment {
                    state,
                    j: state,
                    flag: 0,
                    count: stays,
                });
                steps += stays;
            }
        }
        let o = pick(&table.exits, rng.random::<f64>());
        segments.push(Segment {
            state,
            j: o.j,
            flag: o.flag,
            count: 1,
        });
        steps += 1;
        if nu.is_none() {
            if o.flag == 1 {
                nu = Some(steps);
            } else if steps >= max_steps {
                return Err(Error::MaxStepsExceeded { max_steps });
            }
        }
        state = o.j;
    }
    Ok(Runs {
        segments,
        nu: nu.expect("loop exits only after the flag"),
    })
}

/// Run-length encoded first `n` steps, flags ignored.
fn sample_fixed_runs<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    n: u64,
    rng: &mut R,
) -> Result<Vec<Segment>> {
    k.check_initial(q)?;
    let mut segments = Vec::new();
    let mut state = draw_initial(q, rng);
    let mut steps: u64 = 0;
    while steps < n {
        let table = &k.tables[state];
        if table.stay >= 1.0 {
            segments.push(Segment {
                state,
                j: state,
                flag: 0,
                count: n - steps,
            });
            break;
        }
        if let Some(run) = table.run_length {
            let stays = run.sample(rng).min(n - steps);
            if stays > 0 {
                segments.push(Segment {
                    state,
                    j: state,
                    flag: 0,
                    count: stays,
                });
                steps += stays;
            }
            if steps >= n {
                break;
            }
        }
        let o = pick(&table.exits, rng.random::<f64>());
        segments.push(Segment {
            state,
            j: o.j,
            flag: o.flag,
            count: 1,
        });
        steps += 1;
        state = o.j;
    }
    Ok(segments)
}

/// Draw `κ_ε(t) = Σ_{n≤⌊tv⌋} κ_n` on a time grid from a fresh path.
///
/// Equivalent in law to [`simulate_path`] followed by
/// [`reward_process_grid`], without materializing the path.
pub fn sample_reward_grid<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    v: f64,
    t_grid: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("time scale must be positive, got {v}")));
    }
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(invalid("t grid values must be finite and >= 0"));
    }
    let steps: Vec<u64> = t_grid.iter().map(|t| (t * v).floor() as u64).collect();
    let horizon = steps.iter().copied().max().unwrap_or(0);
    let segments = sample_fixed_runs(k, q, horizon, rng)?;
    let mut cuts = steps.clone();
    cuts.sort_unstable();
    cuts.dedup();
    let prefix = prefix_sums(k, &segments, &cuts, rng);
    Ok(steps
        .iter()
        .map(|c| prefix[cuts.binary_search(c).expect("cut recorded")])
        .collect())
}

/// Draw `ν_ε` together with the partial sojourn sums `Σ_{n≤c} κ_n` at each
/// cut `c < ν_ε`; cuts at or beyond `ν_ε` yield `None`.
pub fn sample_pre_event_rewards<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    cuts: &[u64],
    max_steps: u64,
    rng: &mut R,
) -> Result<(u64, Vec<Option<f64>>)> {
    let runs = sample_runs(k, q, max_steps, |nu| nu, rng)?;
    let nu = runs.nu;
    let mut inside: Vec<u64> = cuts.iter().copied().filter(|c| *c < nu).collect();
    inside.sort_unstable();
    inside.dedup();
    let prefix = prefix_sums(k, &runs.segments, &inside, rng);
    Ok((
        nu,
        cuts.iter()
            .map(|c| inside.binary_search(c).ok().map(|i| prefix[i]))
            .collect(),
    ))
}

/// Sum of `count` i.i.d. draws from `d`.
fn sample_sum<R: Rng + ?Sized>(d: &SojournDistribution, count: u64, rng: &mut R) -> f64 {
    match (d, count) {
        (_, 0) => 0.0,
        (_, 1) => d.sample(rng),
        (SojournDistribution::Deterministic { value }, n) => value * n as f64,
        (SojournDistribution::Exponential { mean }, n) => Gamma::new(n as f64, *mean)
            .expect("positive shape")
            .sample(rng),
        (SojournDistribution::Gamma { shape, scale }, n) => Gamma::new(shape * n as f64, *scale)
            .expect("positive shape")
            .sample(rng),
        (SojournDistribution::Atom { value, prob }, n) => {
            let hits = Binomial::new(n, *prob).expect("probability in [0,1]").sample(rng);
            value * hits as f64
        }
        (_, n) => {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += d.sample(rng);
            }
            acc
        }
    }
}

/// Simulate until the first flagged step and return `(ν, ξ, κ_ν, ξ(t))`.
///
/// For `t > 1` the path continues past `ν` so that `ξ_ε(t) = Σ_{n≤⌊tν⌋} κ_n`
/// follows the process definition. [`Error::MaxStepsExceeded`] is raised when
/// no flag occurs within `max_steps` steps.
pub fn sample_first_rare_event<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    t_grid: Option<&[f64]>,
    max_steps: u64,
    rng: &mut R,
) -> Result<FirstRareEventSample> {
    if let Some(grid) = t_grid {
        if grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(invalid("t grid values must be finite and >= 0"));
        }
    }
    let t_max = t_grid
        .map(|g| g.iter().copied().fold(0.0, f64::max))
        .unwrap_or(0.0);
    let runs = sample_runs(k, q, max_steps, |nu| floor_steps(t_max, nu).max(nu), rng)?;
    let nu = runs.nu;

    // cut points where partial sums are needed
    let mut cuts: Vec<u64> = vec![nu - 1, nu];
    if let Some(grid) = t_grid {
        cuts.extend(grid.iter().map(|t| floor_steps(*t, nu)));
    }
    cuts.sort_unstable();
    cuts.dedup();
    let prefix = prefix_sums(k, &runs.segments, &cuts, rng);
    let at = |c: u64| prefix[cuts.binary_search(&c).expect("cut recorded")];
    let xi = at(nu);
    let last_sojourn = xi - at(nu - 1);
    let xi_grid = t_grid.map(|g| g.iter().map(|t| at(floor_steps(*t, nu))).collect());
    Ok(FirstRareEventSample {
        nu,
        xi,
        last_sojourn,
        xi_grid,
    })
}

fn floor_steps(t: f64, n: u64) -> u64 {
    (t * n as f64).floor() as u64
}

/// Partial sums `Σ_{n≤c} κ_n` at the sorted cut points, with the last
/// sojourn of the flagged step drawn on its own so it can be read off exactly.
fn prefix_sums<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    segments: &[Segment],
    cuts: &[u64],
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; cuts.len()];
    let mut ci = 0;
    while ci < cuts.len() && cuts[ci] == 0 {
        ci += 1;
    }
    let mut pos: u64 = 0;
    let mut acc = 0.0;
    for seg in segments {
        if ci >= cuts.len() {
            break;
        }
        let law = k
            .sojourn(seg.state, seg.j, seg.flag)
            .expect("positive transitions carry a law");
        let end = pos + seg.count;
        let mut start = pos;
        while ci < cuts.len() && cuts[ci] <= end {
            acc += sample_sum(law, cuts[ci] - start, rng);
            start = cuts[ci];
            out[ci] = acc;
            ci += 1;
        }
        if ci < cuts.len() {
            acc += sample_sum(law, end - start, rng);
        }
        pos = end;
    }
    out
}

/// Number of steps `ν_ε` until the first flag, without drawing sojourns.
pub fn sample_nu<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    max_steps: u64,
    rng: &mut R,
) -> Result<u64> {
    Ok(sample_runs(k, q, max_steps, |nu| nu, rng)?.nu)
}

/// Additive functional `Σ_{n≤ν_ε} f(η_{n−1})` of the pre-rare-event path.
pub fn deterministic_reward_to_rare_event<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    f: &[f64],
    max_steps: u64,
    rng: &mut R,
) -> Result<f64> {
    if f.len() != k.m() {
        return Err(Error::DimensionMismatch {
            expected: k.m(),
            got: f.len(),
        });
    }
    if f.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(invalid("reward values must be finite and nonnegative"));
    }
    let runs = sample_runs(k, q, max_steps, |nu| nu, rng)?;
    Ok(runs
        .segments
        .iter()
        .map(|s| f[s.state] * s.count as f64)
        .sum())
}

/// Step-sum reward process `κ_ε(t) = Σ_{n≤⌊tv⌋} κ_n` on a time grid.
pub fn reward_process_grid(path: &PathSample, v: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("time scale must be positive, got {v}")));
    }
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(invalid("t grid values must be finite and >= 0"));
    }
    let required = t_grid
        .iter()
        .map(|t| (t * v).floor() as usize)
        .max()
        .unwrap_or(0);
    if required > path.steps() {
        return Err(Error::PathTooShort {
            required,
            available: path.steps(),
        });
    }
    Ok(t_grid
        .iter()
        .map(|t| path.jump_moments[(t * v).floor() as usize])
        .collect())
}

/// Outcome of regrouping a reward process by the state each sojourn starts in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub passed: bool,
    pub max_discrepancy: f64,
}

/// Recompute `κ_ε(t)` as `Σ_i Σ_{n≤μ_i(⌊tv⌋)} κ_{i,n}`, where `κ_{i,n}` is the
/// sojourn that starts at the `n`-th visit to `i`, and compare with the direct
/// partial sums.
pub fn hitting_decomposition_check(path: &PathSample, v: f64, t_grid: &[f64]) -> Result<DecompositionCheck> {
    let direct = reward_process_grid(path, v, t_grid)?;
    let m = path.states.iter().copied().max().map_or(1, |s| s + 1);
    let mut worst: f64 = 0.0;
    let per_state: Vec<(Vec<usize>, Vec<u64>)> = (0..m)
        .map(|i| {
            Ok((
                chain::hitting_times(&path.states, i),
                chain::occupation_counts(&path.states, i, m)?,
            ))
        })
        .collect::<Result<_>>()?;
    for (t, value) in t_grid.iter().zip(&direct) {
        let n = (t * v).floor() as usize;
        let mut grouped = 0.0;
        for (hits, mu) in &per_state {
            let visits = mu[n] as usize;
            grouped += hits[..visits].iter().map(|&tau| path.sojourns[tau]).sum::<f64>();
        }
        worst = worst.max((grouped - value).abs());
    }
    Ok(DecompositionCheck {
        passed: worst <= 1e-9,
        max_discrepancy: worst,
    })
}

/// Draw `n` i.i.d. sojourns from the state mixture given by `weights` over the
/// outcomes of each state, and return their sum.
pub(crate) fn sample_exit_mixture_sum<R: Rng + ?Sized>(
    k: &MarkovRenewalKernel,
    state_weights: &[f64],
    n: u64,
    rng: &mut R,
) -> f64 {
    let mut acc = 0.0;
    for _ in 0..n {
        let u = rng.random::<f64>();
        let mut c = 0.0;
        let mut state = state_weights.len() - 1;
        for (i, w) in state_weights.iter().enumerate() {
            c += w;
            if u < c {
                state = i;
                break;
            }
        }
        let o = pick(&k.tables[state].all, rng.random::<f64>());
        acc += k.sojourn(state, o.j, o.flag).expect("law").sample(rng);
    }
    acc
}
