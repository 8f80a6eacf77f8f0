//! Exact finite-ε quantities from matrix-geometric formulas.
//!
//! With `Φ_flag(s)_{ij} = p_{ij,flag} · E[e^{-sκ} | i, j, flag]` and
//! `M = Φ_0(0)`, summing over trajectories gives
//!
//! * `E e^{-sξ_ε} = q (I − Φ_0(s))^{-1} Φ_1(s) 1`,
//! * `P{ν_ε > n} = q M^n 1`,
//! * `E I(ν_ε > n) e^{-s(κ_1+…+κ_n)} = q Φ_0(s)^n 1`,
//! * `E e^{-s(κ_1+…+κ_n)} = q (Φ_0(s) + Φ_1(s))^n 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::ProbabilityVector;
use crate::error::{invalid, Error, Result};
use crate::smp::MarkovRenewalKernel;

/// Power-iteration budget for the spectral-radius precheck.
pub const SPECTRAL_ITERATIONS: usize = 50;
/// Convergence tolerance of the spectral-radius precheck.
pub const SPECTRAL_TOL: f64 = 1e-10;

/// `Φ_flag(s)` for one flag value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagTransformMatrix {
    pub s: f64,
    pub flag: u8,
    pub entries: Vec<Vec<f64>>,
}

impl FlagTransformMatrix {
    pub fn new(k: &MarkovRenewalKernel, s: f64, flag: u8) -> Result<Self> {
        let m = flag_matrix(k, s, flag as usize)?;
        Ok(Self {
            s,
            flag,
            entries: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
        })
    }
}

fn flag_matrix(k: &MarkovRenewalKernel, s: f64, flag: usize) -> Result<DMatrix<f64>> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(invalid(format!("Laplace argument must be finite and >= 0, got {s}")));
    }
    let m = k.m();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let p = k.prob(i, j, flag);
            if p > 0.0 {
                let d = k.sojourn(i, j, flag).expect("positive transitions carry a law");
                out[(i, j)] = p * d.laplace(s)?;
            }
        }
    }
    Ok(out)
}

fn check_q(k: &MarkovRenewalKernel, q: &ProbabilityVector) -> Result<DVector<f64>> {
    if q.len() != k.m() {
        return Err(Error::DimensionMismatch {
            expected: k.m(),
            got: q.len(),
        });
    }
    Ok(DVector::from_column_slice(q.as_slice()))
}

/// Spectral radius of a nonnegative matrix by power iteration from the
/// all-ones vector.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = f64::NAN;
    for _ in 0..SPECTRAL_ITERATIONS {
        let y = a * &x;
        let norm = y.iter().map(|v| v.abs()).sum::<f64>();
        if norm == 0.0 {
            return 0.0;
        }
        // x is kept at unit 1-norm, so the 1-norm of y is the growth ratio
        let converged = (norm - estimate).abs() < SPECTRAL_TOL;
        estimate = norm;
        x = y / norm;
        if converged {
            break;
        }
    }
    estimate
}

/// `A^n` by repeated squaring.
pub fn matrix_power(a: &DMatrix<f64>, mut n: u64) -> DMatrix<f64> {
    let mut result = DMatrix::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

fn q_power_ones(q: &DVector<f64>, a: &DMatrix<f64>, n: u64) -> f64 {
    let ones = DVector::from_element(a.nrows(), 1.0);
    q.dot(&(matrix_power(a, n) * ones))
}

/// `E e^{-sξ_ε}` in closed form.
///
/// Fails with [`Error::SingularSystem`] when `Φ_0(s)` has spectral radius
/// numerically at or above one (the rare event is then not certain).
pub fn exact_laplace_xi(k: &MarkovRenewalKernel, q: &ProbabilityVector, s: f64) -> Result<f64> {
    let qv = check_q(k, q)?;
    let phi0 = flag_matrix(k, s, 0)?;
    let phi1 = flag_matrix(k, s, 1)?;
    let rho = spectral_radius(&phi0);
    if !(rho < 1.0 - 1e-12) {
        return Err(Error::SingularSystem { spectral_radius: rho });
    }
    let m = k.m();
    let system = DMatrix::identity(m, m) - phi0;
    let rhs = DVector::from_iterator(m, (0..m).map(|i| phi1.row(i).sum()));
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem { spectral_radius: rho })?;
    let value = qv.dot(&x);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::SingularSystem { spectral_radius: rho })
    }
}

/// `P{ν_ε > n}`.
pub fn survival_nu_exact(k: &MarkovRenewalKernel, q: &ProbabilityVector, n: u64) -> Result<f64> {
    let qv = check_q(k, q)?;
    let m = k.m();
    let surv = DMatrix::from_fn(m, m, |i, j| k.prob(i, j, 0));
    Ok(q_power_ones(&qv, &surv, n))
}

/// `E I(ν_ε > n) e^{-s(κ_1+…+κ_n)}`.
pub fn joint_survival_transform(
    k: &MarkovRenewalKernel,
    q: &ProbabilityVector,
    s: f64,
    n: u64,
) -> Result<f64> {
    let qv = check_q(k, q)?;
    Ok(q_power_ones(&qv, &flag_matrix(k, s, 0)?, n))
}

/// `E e^{-s(κ_1+…+κ_n)}`.
pub fn exact_laplace_kappa(k: &MarkovRenewalKernel, q: &ProbabilityVector, s: f64, n: u64) -> Result<f64> {
    let qv = check_q(k, q)?;
    let total = flag_matrix(k, s, 0)? + flag_matrix(k, s, 1)?;
    Ok(q_power_ones(&qv, &total, n))
}
