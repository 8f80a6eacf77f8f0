//! Scenario specifications and the builtin registry.
//!
//! A scenario is a model family plus its target cumulant, default grids, a
//! sample count and a mandatory master seed. Families come either from a
//! builtin id or from a kernel template whose numeric fields may be
//! expressions in `eps`, e.g. `"1 - eps"` or `"math::sqrt(eps)"`. Template
//! expressions use integer arithmetic on integer literals, so write `1.0/2.0`
//! rather than `1/2`.

use std::collections::BTreeMap;
use std::path::Path;

use evalexpr::{
    eval_number_with_context, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Value,
};
use serde::{Deserialize, Serialize};

use crate::chain::{ProbabilityVector, StochasticMatrix};
use crate::conditions::{
    averaged_rare_prob, validate_eps_grid, CheckOptions, ConditionId, ConditionReport, EpsilonFamily, Reward, Verdict, DEFAULT_CHECK_GRID, DEFAULT_DELTAS,
    DEFAULT_S_GRID, DEFAULT_U_GRID,
};
use crate::dist::SojournDistribution;
use crate::error::{Error, Result};
use crate::levy::Cumulant;
use crate::rng::{map_replicates, with_workers, StreamKey};
use crate::smp::{default_max_steps, sample_first_rare_event, FirstRareEventSample, MarkovRenewalKernel};
use crate::verify::VerifyOptions;

pub const DEFAULT_VERIFY_GRID: [f64; 2] = [1e-2, 1e-3];
pub const DEFAULT_T_GRID: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_VERIFY_S_GRID: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_SEED: u64 = 42;

/// Parameters of the two-state scenario: drift weight `a`, jump size `b` and
/// jump intensity `q`, chosen so that `π_0 a = π_1 q = 1`.
pub const TWO_STATE_A: f64 = 12.0 / 7.0;
pub const TWO_STATE_B: f64 = 1.0;
pub const TWO_STATE_Q: f64 = 12.0 / 5.0;

/// Stable index and scale of the heavy-tailed scenario.
pub const PARETO_ALPHA: f64 = 0.5;
pub const PARETO_C: f64 = 1.0;

fn default_check_grid() -> Vec<f64> {
    DEFAULT_CHECK_GRID.to_vec()
}
fn default_verify_grid() -> Vec<f64> {
    DEFAULT_VERIFY_GRID.to_vec()
}
fn default_s_grid() -> Vec<f64> {
    DEFAULT_VERIFY_S_GRID.to_vec()
}
fn default_t_grid() -> Vec<f64> {
    DEFAULT_T_GRID.to_vec()
}
fn default_u_grid() -> Vec<f64> {
    DEFAULT_U_GRID.to_vec()
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Cumulant>,
    /// The target is a discretized stand-in for an infinite-activity law.
    #[serde(default)]
    pub approximate_target: bool,
    /// ε-grid for the condition checkers.
    #[serde(default = "default_check_grid")]
    pub eps_grid: Vec<f64>,
    /// ε-grid for the Monte Carlo verifiers.
    #[serde(default = "default_verify_grid")]
    pub verify_eps_grid: Vec<f64>,
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<f64>,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_u_grid")]
    pub u_grid: Vec<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub reward: Reward,
    /// Registered verdicts, used by `check` to decide its exit status.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub expectations: BTreeMap<ConditionId, Verdict>,
}

impl ScenarioSpec {
    fn base(name: &str, description: &str, target: Option<Cumulant>) -> Self {
        Self {
            name: name.into(),
            description: Some(description.into()),
            builtin: Some(name.into()),
            template: None,
            initial: None,
            target,
            approximate_target: false,
            eps_grid: default_check_grid(),
            verify_eps_grid: default_verify_grid(),
            s_grid: default_s_grid(),
            t_grid: default_t_grid(),
            u_grid: default_u_grid(),
            n_samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            reward: Reward::default(),
            expectations: BTreeMap::new(),
        }
    }

    fn expect(mut self, verdicts: [Verdict; 6]) -> Self {
        self.expectations = ConditionId::ALL.into_iter().zip(verdicts).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.builtin, &self.template) {
            (Some(_), Some(_)) => return Err(Error::Config("give either 'builtin' or 'template', not both".into())),
            (None, None) => return Err(Error::Config("scenario needs a 'builtin' id or a kernel 'template'".into())),
            (Some(id), None) if !BUILTIN_NAMES.contains(&id.as_str()) => {
                return Err(Error::UnknownScenario {
                    name: id.clone(),
                    available: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect(),
                })
            }
            _ => {}
        }
        validate_eps_grid(&self.eps_grid).map_err(|e| Error::Config(format!("eps_grid: {e}")))?;
        validate_eps_grid(&self.verify_eps_grid).map_err(|e| Error::Config(format!("verify_eps_grid: {e}")))?;
        for (name, grid) in [("s_grid", &self.s_grid), ("t_grid", &self.t_grid), ("u_grid", &self.u_grid)] {
            if grid.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            if grid.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("{name} values must be finite and >= 0")));
            }
        }
        if self.u_grid.iter().any(|u| *u <= 0.0) {
            return Err(Error::Config("u_grid values must be positive".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("n_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Checker options derived from the scenario grids.
    pub fn check_options(&self) -> CheckOptions {
        CheckOptions {
            s_grid: DEFAULT_S_GRID.to_vec(),
            u_grid: self.u_grid.clone(),
            deltas: DEFAULT_DELTAS.to_vec(),
            target: self.target.clone(),
            reward: self.reward.clone(),
            ..CheckOptions::default()
        }
    }
}

impl ScenarioSpec {
    /// Verifier options from the scenario grids, seed and reward.
    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            eps_grid: self.verify_eps_grid.clone(),
            s_grid: self.s_grid.clone(),
            t_grid: self.t_grid.clone(),
            n_samples: self.n_samples,
            seed: self.seed,
            check: self.check_options(),
            reward: self.reward.clone(),
            ..VerifyOptions::default()
        }
    }
}

/// A scenario with its family built.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub family: EpsilonFamily,
}

impl Scenario {
    pub fn from_spec(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let family = if let Some(id) = &spec.builtin {
            let id = id.clone();
            EpsilonFamily::new(spec.name.clone(), spec.eps_grid.clone(), move |eps| builtin_kernel(&id, eps))?
        } else {
            let template = spec.template.clone().expect("validated");
            EpsilonFamily::new(spec.name.clone(), spec.eps_grid.clone(), move |eps| {
                kernel_from_template(&template, eps)
            })?
        };
        let family = match &spec.initial {
            Some(q) => family.with_initial(ProbabilityVector::new(q.clone())?)?,
            None => family,
        };
        Ok(Self { spec, family })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// `n` independent first-rare-event samples at `eps`, with `ξ(t)` on
    /// `t_grid`. Replicate `i` always draws from the same stream of `seed`,
    /// so the output does not depend on `workers`.
    pub fn sample(
        &self,
        eps: f64,
        n: usize,
        seed: u64,
        t_grid: &[f64],
        workers: Option<usize>,
    ) -> Result<Vec<FirstRareEventSample>> {
        if n == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        let k = self.family.kernel(eps)?;
        let q = self.family.initial(k.m())?;
        let max_steps = default_max_steps(averaged_rare_prob(&k)?.v_eps);
        let key = StreamKey::new(seed).derive_str("simulate").derive(eps.to_bits());
        with_workers(workers, || {
            map_replicates(n, |i| sample_first_rare_event(&k, &q, Some(t_grid), max_steps, &mut key.stream(i)))
        })
        .into_iter()
        .collect()
    }
}

pub const BUILTIN_NAMES: [&str; 8] = [
    "drift",
    "geometric",
    "two_state",
    "pareto_stable",
    "no_decay_A",
    "vanishing_coupling_B",
    "fat_flag_C",
    "unscaled_D",
];

fn single_state(flag: f64, law: impl Fn(usize) -> Result<SojournDistribution>) -> Result<MarkovRenewalKernel> {
    let p = StochasticMatrix::from_rows(vec![vec![1.0]])?;
    let laws = [law(0)?, law(1)?];
    MarkovRenewalKernel::with_independent_flags(&p, &[flag], |_, fl| laws[fl].clone())
}

/// Kernel of a builtin scenario at `eps`.
pub fn builtin_kernel(name: &str, eps: f64) -> Result<MarkovRenewalKernel> {
    match name {
        "drift" => single_state(eps, |_| SojournDistribution::exponential(eps)),
        "geometric" => single_state(eps, |_| SojournDistribution::atom(1.0, eps)),
        "two_state" => {
            let p = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.7, 0.3]])?;
            let p_eps = 17.0 / 12.0 * eps;
            let laws = [
                SojournDistribution::exponential(TWO_STATE_A * p_eps)?,
                SojournDistribution::atom(TWO_STATE_B, TWO_STATE_Q * p_eps)?,
            ];
            MarkovRenewalKernel::with_independent_flags(&p, &[eps, 2.0 * eps], |i, _| laws[i].clone())
        }
        "pareto_stable" => {
            let scale = eps.powf(1.0 / PARETO_ALPHA);
            single_state(eps, |_| SojournDistribution::pareto(PARETO_ALPHA, scale))
        }
        "no_decay_A" => single_state(0.3, |_| SojournDistribution::exponential(0.3)),
        "vanishing_coupling_B" => {
            let p = StochasticMatrix::from_rows(vec![vec![1.0 - eps, eps], vec![eps, 1.0 - eps]])?;
            let law = SojournDistribution::exponential(eps)?;
            MarkovRenewalKernel::with_independent_flags(&p, &[eps, eps], |_, _| law.clone())
        }
        "fat_flag_C" => single_state(eps, |fl| {
            if fl == 1 {
                SojournDistribution::deterministic(1.0)
            } else {
                SojournDistribution::exponential(eps)
            }
        }),
        "unscaled_D" => single_state(eps, |_| SojournDistribution::deterministic(1.0)),
        other => Err(unknown(other)),
    }
}

fn unknown(name: &str) -> Error {
    Error::UnknownScenario {
        name: name.into(),
        available: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

/// Specs of all builtin scenarios, in registry order.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    use Verdict::{Fail as F, Pass as P};
    let drift = || Cumulant::drift(1.0).expect("valid");
    let unit_jump = |g: f64| Cumulant::new(g, vec![(1.0, 1.0)]).expect("valid");
    let mut pareto = ScenarioSpec::base(
        "pareto_stable",
        "one state, flag prob eps, shifted Pareto(1/2) sojourns scaled by eps^2; target sqrt(pi s) discretized",
        Some(
            Cumulant::stable_approximation(PARETO_ALPHA, PARETO_C, 1e-4, 1e4, 20)
                .expect("valid discretization"),
        ),
    )
    .expect([P, P, P, P, P, P]);
    pareto.approximate_target = true;
    vec![
        ScenarioSpec::base(
            "drift",
            "one state, flag prob eps, Exp(mean eps) sojourns; xi is exactly Exp(1); target A(s) = s",
            Some(drift()),
        )
        .expect([P, P, P, P, P, P]),
        ScenarioSpec::base(
            "geometric",
            "one state, flag prob eps, sojourn 1 with prob eps else 0; target A(s) = 1 - exp(-s)",
            Some(unit_jump(0.0)),
        )
        .expect([P, P, P, P, P, P]),
        ScenarioSpec::base(
            "two_state",
            "P = [[0.5,0.5],[0.7,0.3]], flags (eps, 2 eps), drift in state 0 and unit jumps in state 1; target A(s) = s + 1 - exp(-s)",
            Some(unit_jump(1.0)),
        )
        .expect([P, P, P, P, P, P]),
        pareto,
        ScenarioSpec::base(
            "no_decay_A",
            "known failure: flag probability stays at 0.3",
            None,
        )
        .expect([F, P, F, P, P, P]),
        ScenarioSpec::base(
            "vanishing_coupling_B",
            "known failure: the two states decouple as eps -> 0",
            Some(drift()),
        )
        .expect([P, F, P, P, P, P]),
        ScenarioSpec::base(
            "fat_flag_C",
            "known failure: the flagged step lasts one time unit",
            Some(unit_jump(1.0)),
        )
        .expect([P, P, F, P, P, P]),
        ScenarioSpec::base(
            "unscaled_D",
            "known failure: unit sojourns that do not shrink with eps",
            None,
        )
        .expect([P, P, F, F, F, P]),
    ]
}

/// Builtin scenario by name.
pub fn lookup(name: &str) -> Result<Scenario> {
    let spec = builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| unknown(name))?;
    Scenario::from_spec(spec)
}

/// Resolve a command-line argument: an existing JSON file holding either a
/// scenario spec or a plain kernel, or else a builtin name.
pub fn load(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if !path.is_file() {
        return lookup(arg);
    }
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{arg}: {e}")))?;
    if value.get("joint_probs").is_some() {
        let kernel: MarkovRenewalKernel =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{arg}: {e}")))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        let mut spec = ScenarioSpec::base(&name, "constant kernel loaded from file", None);
        spec.builtin = None;
        let family = EpsilonFamily::constant(name, spec.eps_grid.clone(), kernel)?;
        spec.template = Some(serde_json::from_str(&text)?);
        return Ok(Scenario { spec, family });
    }
    let spec: ScenarioSpec = serde_json::from_value(value).map_err(|e| Error::Config(format!("{arg}: {e}")))?;
    Scenario::from_spec(spec)
}

/// Conditions whose verdict contradicts the scenario's registered
/// expectation. Conditions without an expectation are only flagged when they
/// fail. An empty result means the check run succeeded.
pub fn expectation_mismatches(spec: &ScenarioSpec, reports: &[ConditionReport]) -> Vec<String> {
    reports
        .iter()
        .filter_map(|r| {
            let expected = r
                .condition
                .parse::<ConditionId>()
                .ok()
                .and_then(|id| spec.expectations.get(&id).copied());
            match expected {
                Some(e) if e != r.verdict => Some(format!("{}: expected {e}, got {}", r.condition, r.verdict)),
                None if r.verdict == Verdict::Fail => Some(format!("{}: fail", r.condition)),
                _ => None,
            }
        })
        .collect()
}

/// Evaluate a kernel template at `eps`.
///
/// Every string value outside `"kind"` fields is an expression in `eps`;
/// `pi` and `e` are also defined.
pub fn kernel_from_template(template: &serde_json::Value, eps: f64) -> Result<MarkovRenewalKernel> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    for (name, value) in [("eps", eps), ("pi", std::f64::consts::PI), ("e", std::f64::consts::E)] {
        ctx.set_value(name.into(), Value::Float(value))
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let evaluated = substitute(template, &ctx, None)?;
    serde_json::from_value(evaluated).map_err(|e| Error::Config(format!("template at eps={eps}: {e}")))
}

fn substitute(
    v: &serde_json::Value,
    ctx: &HashMapContext<DefaultNumericTypes>,
    key: Option<&str>,
) -> Result<serde_json::Value> {
    use serde_json::Value as J;
    Ok(match v {
        J::String(s) if key != Some("kind") => {
            let x = eval_number_with_context(s, ctx)
                .map_err(|e| Error::Config(format!("expression '{s}': {e}")))?;
            serde_json::Number::from_f64(x)
                .map(J::Number)
                .ok_or_else(|| Error::Config(format!("expression '{s}' evaluated to {x}")))?
        }
        J::Array(items) => J::Array(items.iter().map(|x| substitute(x, ctx, None)).collect::<Result<_>>()?),
        J::Object(map) => J::Object(
            map.iter()
                .map(|(k, x)| Ok((k.clone(), substitute(x, ctx, Some(k))?)))
                .collect::<Result<_>>()?,
        ),
        other => other.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::averaged_rare_prob;

    #[test]
    fn registry_has_expected_names() {
        let names: Vec<String> = builtin_scenarios().into_iter().map(|s| s.name).collect();
        assert_eq!(names, BUILTIN_NAMES.to_vec());
        for name in BUILTIN_NAMES {
            let s = lookup(name).unwrap();
            assert_eq!(s.family.eps_grid(), DEFAULT_CHECK_GRID);
        }
    }

    #[test]
    fn unknown_name_lists_registry() {
        let err = lookup("nope").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nope") && msg.contains("two_state") && msg.contains("unscaled_D"));
    }

    #[test]
    fn two_state_target_value() {
        let spec = builtin_scenarios().into_iter().find(|s| s.name == "two_state").unwrap();
        let a1 = spec.target.unwrap().eval(1.0);
        assert!((a1 - (1.0 + (1.0 - (-1.0f64).exp()))).abs() < 1e-15);
        // π_0 a = π_1 q = 1 with π = (7/12, 5/12)
        assert!((7.0 / 12.0 * TWO_STATE_A - 1.0).abs() < 1e-15);
        assert!((5.0 / 12.0 * TWO_STATE_Q - 1.0).abs() < 1e-15);
        let k = builtin_kernel("two_state", 1e-3).unwrap();
        assert!((averaged_rare_prob(&k).unwrap().p_eps - 17.0 / 12.0 * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn template_matches_builtin() {
        let template = serde_json::json!({
            "m": 1,
            "joint_probs": [[["1 - eps", "eps"]]],
            "sojourn": {
                "0,0,0": {"kind": "exp", "mean": "eps"},
                "0,0,1": {"kind": "exp", "mean": "eps"}
            }
        });
        for eps in [0.1, 0.003] {
            let a = kernel_from_template(&template, eps).unwrap();
            let b = builtin_kernel("drift", eps).unwrap();
            assert_eq!(a, b);
        }
        let bad = serde_json::json!({"m": 1, "joint_probs": [[["1 - eps", "eps +"]]], "sojourn": {}});
        assert!(matches!(kernel_from_template(&bad, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn spec_json_requires_seed_and_valid_grids() {
        let no_seed = r#"{"name":"x","builtin":"drift"}"#;
        assert!(serde_json::from_str::<ScenarioSpec>(no_seed).is_err());
        let ok: ScenarioSpec = serde_json::from_str(r#"{"name":"x","builtin":"drift","seed":7}"#).unwrap();
        assert_eq!(ok.n_samples, DEFAULT_SAMPLES);
        assert!(Scenario::from_spec(ok.clone()).is_ok());
        let mut bad = ok.clone();
        bad.eps_grid = vec![1e-3, 1e-2];
        assert!(Scenario::from_spec(bad).is_err());
        let mut bad = ok;
        bad.builtin = Some("missing".into());
        assert!(matches!(Scenario::from_spec(bad), Err(Error::UnknownScenario { .. })));
    }

    #[test]
    fn spec_roundtrip() {
        for spec in builtin_scenarios() {
            let json = serde_json::to_string(&spec).unwrap();
            let back: ScenarioSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn builtin_verdicts_match_registered_expectations() {
        for spec in builtin_scenarios() {
            let scenario = Scenario::from_spec(spec.clone()).unwrap();
            let reports =
                crate::conditions::check_conditions(&scenario.family, &ConditionId::ALL, &spec.check_options()).unwrap();
            for (id, report) in ConditionId::ALL.iter().zip(&reports) {
                assert_eq!(
                    Some(&report.verdict),
                    spec.expectations.get(id),
                    "{} condition {id}: {:?}",
                    spec.name,
                    report.notes
                );
            }
        }
    }
}
