//! Rare-event limits for semi-Markov step-sum processes.
//!
//! The crate models a finite Markov renewal kernel whose transitions carry a
//! rare-event flag, and studies the reward accumulated up to the first flagged
//! step as the flag probabilities shrink. It provides samplers, exact
//! matrix-geometric transforms, the limiting Lévy objects, finite-grid checkers
//! for the convergence conditions and a Monte Carlo verification harness.

pub mod analytic;
pub mod chain;
pub mod conditions;
pub mod dist;
pub mod error;
pub mod io;
pub mod levy;
pub mod quad;
pub mod rng;
pub mod scenario;
pub mod smp;
pub mod verify;

pub use chain::{stationary_distribution, ProbabilityVector, StochasticMatrix};
pub use conditions::{ConditionId, ConditionReport, EpsilonFamily, Reward, Verdict};
pub use dist::SojournDistribution;
pub use error::{Error, Result};
pub use levy::Cumulant;
pub use scenario::{Scenario, ScenarioSpec};
pub use smp::MarkovRenewalKernel;
pub use verify::{Theorem, Trend, VerificationReport, VerifyOptions};
