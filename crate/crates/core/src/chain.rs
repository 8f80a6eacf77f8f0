//! Finite Markov chain core: stochastic matrices, stationary distributions,
//! the ring-chain ergodicity search, occupation counts and hitting times.
//!
//! States are indexed `0..m` everywhere (API, JSON and reports).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditions::EpsilonFamily;
use crate::error::{invalid, Error, Result};

/// Row-sum and normalization tolerance.
pub const SUM_TOL: f64 = 1e-12;

/// Condition number above which the direct stationary solve is abandoned.
pub const MAX_CONDITION: f64 = 1e12;

/// Default ring-chain threshold standing in for `liminf > 0`.
pub const DEFAULT_RING_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct StochasticMatrix {
    m: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    m: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRepr> for StochasticMatrix {
    type Error = Error;

    fn try_from(repr: MatrixRepr) -> Result<Self> {
        if repr.rows.len() != repr.m {
            return Err(Error::DimensionMismatch {
                expected: repr.m,
                got: repr.rows.len(),
            });
        }
        StochasticMatrix::from_rows(repr.rows)
    }
}

impl From<StochasticMatrix> for MatrixRepr {
    fn from(p: StochasticMatrix) -> Self {
        MatrixRepr {
            m: p.m,
            rows: p.rows(),
        }
    }
}

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(invalid("stochastic matrix needs at least one state"));
        }
        let mut entries = Vec::with_capacity(m * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            let mut sum = 0.0;
            for &p in &row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!("row {i}: entry {p} outside [0,1]")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(invalid(format!("row {i} sums to {sum}")));
            }
            entries.extend(row);
        }
        Ok(Self { m, entries })
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::from_rows(
            (0..m)
                .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.m, &self.entries)
    }

    /// Whether the support graph `{(i,j): p_ij > 0}` is strongly connected.
    pub fn is_irreducible(&self) -> bool {
        strongly_connected(self.m, |i, j| self.get(i, j) > 0.0)
    }

    /// `πP` for a row vector `π`.
    pub fn left_apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (i, &w) in pi.iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(self.row(i)) {
                *o += w * p;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VectorRepr", into = "VectorRepr")]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VectorRepr {
    probs: Vec<f64>,
}

impl TryFrom<VectorRepr> for ProbabilityVector {
    type Error = Error;
    fn try_from(repr: VectorRepr) -> Result<Self> {
        ProbabilityVector::new(repr.probs)
    }
}

impl From<ProbabilityVector> for VectorRepr {
    fn from(p: ProbabilityVector) -> Self {
        VectorRepr { probs: p.probs }
    }
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("probability vector is empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probability vector has a negative or non-finite entry"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(invalid("probability vector is empty"));
        }
        Ok(Self {
            probs: vec![1.0 / m as f64; m],
        })
    }

    /// Point mass on `state`.
    pub fn point(m: usize, state: usize) -> Result<Self> {
        if state >= m {
            return Err(Error::StateOutOfRange { state, m });
        }
        let mut probs = vec![0.0; m];
        probs[state] = 1.0;
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Stationary distribution of an irreducible chain.
///
/// Solves `(Pᵀ − I)π = 0` with the last equation replaced by `Σπ = 1`, polished
/// by one step of iterative refinement. Falls back to lazy power iteration when
/// the replaced system has condition number above [`MAX_CONDITION`].
pub fn stationary_distribution(p: &StochasticMatrix) -> Result<ProbabilityVector> {
    if !p.is_irreducible() {
        return Err(Error::NotErgodic);
    }
    let m = p.m();
    if m == 1 {
        return ProbabilityVector::new(vec![1.0]);
    }
    let mut a = p.to_dmatrix().transpose() - DMatrix::<f64>::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;

    let singular = a.clone().svd(false, false).singular_values;
    let smax = singular.max();
    let smin = singular.min();
    let direct = if smin > 0.0 && smax / smin <= MAX_CONDITION {
        let lu = a.clone().lu();
        lu.solve(&b).map(|mut x| {
            let residual = &b - &a * &x;
            if let Some(dx) = lu.solve(&residual) {
                x += dx;
            }
            x
        })
    } else {
        None
    };

    let mut pi: Vec<f64> = match direct {
        Some(x) => x.iter().copied().collect(),
        None => lazy_power_iteration(p, 1e-15, 10_000_000),
    };
    // Round-off can leave entries at -1e-17; the chain is irreducible so the
    // true values are strictly positive.
    for x in &mut pi {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= sum);
    if pi.iter().any(|&x| x <= 0.0) {
        pi = lazy_power_iteration(p, 1e-15, 10_000_000);
    }
    ProbabilityVector::new(pi)
}

/// Power iteration on `(P + I)/2`, which shares `π` with `P` and is aperiodic.
fn lazy_power_iteration(p: &StochasticMatrix, tol: f64, max_iter: usize) -> Vec<f64> {
    let m = p.m();
    let mut x = vec![1.0 / m as f64; m];
    for _ in 0..max_iter {
        let px = p.left_apply(&x);
        let next: Vec<f64> = x.iter().zip(&px).map(|(a, b)| 0.5 * (a + b)).collect();
        let delta = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if delta < tol {
            break;
        }
    }
    let sum: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= sum);
    x
}

pub(crate) fn strongly_connected(m: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..m {
                let e = if forward { edge(i, j) } else { edge(j, i) };
                if e && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    m > 0 && reach(true) && reach(false)
}

fn shortest_path(m: usize, from: usize, to: usize, edge: &impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; m];
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..m {
            if edge(i, j) && !seen[j] {
                seen[j] = true;
                prev[j] = i;
                queue.push_back(j);
            }
        }
    }
    if !seen[to] {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Closed walk from state 0 through every state using only edges accepted by
/// `edge`, built by repeatedly walking to the nearest unvisited state.
fn covering_walk(m: usize, edge: impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    if m == 1 {
        return edge(0, 0).then(|| vec![0, 0]);
    }
    let mut walk = vec![0usize];
    let mut visited = vec![false; m];
    visited[0] = true;
    let mut cur = 0;
    while visited.iter().any(|v| !v) {
        // BFS distances from cur; pick the closest unvisited state
        let mut dist = vec![usize::MAX; m];
        dist[cur] = 0;
        let mut queue = VecDeque::from([cur]);
        while let Some(i) = queue.pop_front() {
            for j in 0..m {
                if edge(i, j) && dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        let target = (0..m)
            .filter(|&j| !visited[j] && dist[j] != usize::MAX)
            .min_by_key(|&j| (dist[j], j))?;
        let path = shortest_path(m, cur, target, &edge)?;
        for &s in &path[1..] {
            visited[s] = true;
            walk.push(s);
        }
        cur = target;
    }
    let back = shortest_path(m, cur, 0, &edge)?;
    walk.extend_from_slice(&back[1..]);
    Some(walk)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingVerdict {
    Pass,
    Fail,
}

/// Outcome of the ring-chain search over an ε-grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingChainReport {
    /// Closed walk `i_0, …, i_N = i_0` covering all states (empty when none exists).
    pub ring: Vec<usize>,
    pub eps_grid: Vec<f64>,
    /// Smallest transition probability along the ring, one entry per ε.
    pub min_edge_prob: Vec<f64>,
    /// `min` of `min_edge_prob` over the grid.
    pub bottleneck: f64,
    pub threshold: f64,
    pub verdict: RingVerdict,
    /// Smallest stationary probability over the grid, for passing families.
    pub min_stationary: Option<f64>,
    pub note: String,
}

/// Search for a ring chain whose edges stay at or above `threshold` on the
/// whole ε-grid.
///
/// A closed walk covering all states exists in a digraph exactly when the
/// digraph is strongly connected, so the best achievable grid-wide minimum
/// edge is the largest τ for which `{(i,j): min_ε p_ε,ij ≥ τ}` is strongly
/// connected. The search is exact for every `m`.
pub fn check_ring_ergodicity(family: &EpsilonFamily, threshold: f64) -> Result<RingChainReport> {
    if !(threshold > 0.0) {
        return Err(invalid("ring threshold must be positive"));
    }
    let grid = family.eps_grid().to_vec();
    let matrices = grid
        .iter()
        .map(|&eps| family.kernel(eps).map(|k| k.embedded_matrix()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ring_search(&grid, &matrices, threshold))
}

/// [`check_ring_ergodicity`] over explicit matrices.
pub fn ring_search(grid: &[f64], matrices: &[StochasticMatrix], threshold: f64) -> RingChainReport {
    let note = "finite-grid proxy: liminf over ε is replaced by the minimum over the supplied grid".to_string();
    let m = matrices[0].m();
    let weight = |i: usize, j: usize| {
        matrices
            .iter()
            .map(|p| p.get(i, j))
            .fold(f64::INFINITY, f64::min)
    };
    let weights: Vec<f64> = (0..m * m).map(|k| weight(k / m, k % m)).collect();
    let mut candidates: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    let ring = candidates.iter().find_map(|&tau| {
        let edge = |i: usize, j: usize| weights[i * m + j] >= tau;
        if !strongly_connected(m, edge) {
            return None;
        }
        covering_walk(m, edge)
    });

    let Some(ring) = ring else {
        return RingChainReport {
            ring: Vec::new(),
            eps_grid: grid.to_vec(),
            min_edge_prob: vec![0.0; grid.len()],
            bottleneck: 0.0,
            threshold,
            verdict: RingVerdict::Fail,
            min_stationary: None,
            note,
        };
    };
    let min_edge_prob: Vec<f64> = matrices
        .iter()
        .map(|p| {
            ring.windows(2)
                .map(|w| p.get(w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let bottleneck = min_edge_prob.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = if bottleneck >= threshold {
        RingVerdict::Pass
    } else {
        RingVerdict::Fail
    };
    let min_stationary = match verdict {
        RingVerdict::Pass => matrices
            .iter()
            .map(|p| stationary_distribution(p).map(|pi| pi.min()))
            .collect::<Result<Vec<_>>>()
            .ok()
            .map(|v| v.into_iter().fold(f64::INFINITY, f64::min)),
        RingVerdict::Fail => None,
    };
    RingChainReport {
        ring,
        eps_grid: grid.to_vec(),
        min_edge_prob,
        bottleneck,
        threshold,
        verdict,
        min_stationary,
        note,
    }
}

fn check_path(states: &[usize], m: usize) -> Result<()> {
    match states.iter().find(|&&s| s >= m) {
        Some(&state) => Err(Error::StateOutOfRange { state, m }),
        None => Ok(()),
    }
}

/// `μ_i(k) = #{1 ≤ l ≤ k : η_{l−1} = i}` for `k = 0..n`, where the path is
/// `η_0..η_n`.
pub fn occupation_counts(states: &[usize], state: usize, m: usize) -> Result<Vec<u64>> {
    check_path(states, m)?;
    if state >= m {
        return Err(Error::StateOutOfRange { state, m });
    }
    let n = states.len().saturating_sub(1);
    let mut out = Vec::with_capacity(n + 1);
    let mut count = 0u64;
    out.push(0);
    for &s in &states[..n] {
        if s == state {
            count += 1;
        }
        out.push(count);
    }
    Ok(out)
}

/// Successive moments `τ_{i,1} < τ_{i,2} < …` at which the path sits in `state`.
pub fn hitting_times(states: &[usize], state: usize) -> Vec<usize> {
    states
        .iter()
        .enumerate()
        .filter_map(|(k, &s)| (s == state).then_some(k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> StochasticMatrix {
        StochasticMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn periodic_two_cycle() {
        let pi = stationary_distribution(&mat(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((pi.as_slice()[0] - 0.5).abs() < 1e-15);
        assert!((pi.as_slice()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_state_balance() {
        let pi = stationary_distribution(&mat(&[&[0.9, 0.1], &[0.2, 0.8]])).unwrap();
        assert!((pi.as_slice()[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi.as_slice()[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn identity_is_not_ergodic() {
        let err = stationary_distribution(&StochasticMatrix::identity(3).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NotErgodic));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(StochasticMatrix::from_rows(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::from_rows(vec![vec![-0.1, 1.1], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::from_rows(vec![vec![1.0, 0.0]]).is_err());
        assert!(StochasticMatrix::from_rows(vec![]).is_err());
    }

    #[test]
    fn matrix_json_field_names() {
        let p = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"m":2,"rows":[[0.9,0.1],[0.2,0.8]]}"#);
        let back: StochasticMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let pi = ProbabilityVector::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(serde_json::to_string(&pi).unwrap(), r#"{"probs":[0.25,0.75]}"#);
        assert!(serde_json::from_str::<StochasticMatrix>(r#"{"m":3,"rows":[[1.0]]}"#).is_err());
    }

    #[test]
    fn ring_on_constant_matrix() {
        let p = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let r = ring_search(&[0.1], &[p], 0.05);
        assert_eq!(r.verdict, RingVerdict::Pass);
        assert_eq!(r.ring, vec![0, 1, 0]);
        assert!((r.bottleneck - 0.1).abs() < 1e-15);
        assert!((r.min_stationary.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ring_single_state() {
        let r = ring_search(&[0.1], &[mat(&[&[1.0]])], 1e-3);
        assert_eq!(r.verdict, RingVerdict::Pass);
        assert_eq!(r.ring, vec![0, 0]);
    }

    #[test]
    fn ring_vanishing_coupling_fails() {
        let grid = [1e-1, 1e-2, 1e-3, 1e-4];
        let ms: Vec<_> = grid
            .iter()
            .map(|&e| mat(&[&[1.0 - e, e], &[e, 1.0 - e]]))
            .collect();
        let r = ring_search(&grid, &ms, 0.01);
        assert_eq!(r.verdict, RingVerdict::Fail);
        assert!((r.bottleneck - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn ring_reducible_has_no_walk() {
        let r = ring_search(&[0.1], &[StochasticMatrix::identity(3).unwrap()], 1e-3);
        assert_eq!(r.verdict, RingVerdict::Fail);
        assert!(r.ring.is_empty());
    }

    #[test]
    fn occupation_and_hitting() {
        let path = [0, 1, 0, 0];
        let mu = occupation_counts(&path, 0, 2).unwrap();
        assert_eq!(mu, vec![0, 1, 1, 2]);
        assert_eq!(hitting_times(&path, 0), vec![0, 2, 3]);
        assert!(hitting_times(&[1, 1], 0).is_empty());
        assert!(matches!(
            occupation_counts(&[0, 2], 0, 2),
            Err(Error::StateOutOfRange { state: 2, m: 2 })
        ));
        assert_eq!(occupation_counts(&[1], 0, 2).unwrap(), vec![0]);
    }
}
