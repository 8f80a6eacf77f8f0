//! Subcommand bodies. Each returns `Ok(true)` on success, `Ok(false)` when the
//! run completed but its verdict is negative.

use std::path::Path;

use fret_core::conditions::check_conditions;
use fret_core::io::{read_matrix, to_json_pretty, write_json};
use fret_core::rng::workers_from_env;
use fret_core::scenario::{builtin_scenarios, expectation_mismatches, load};
use fret_core::verify::verify as run_verify;
use fret_core::{stationary_distribution, ConditionId, Result, Theorem};

pub fn stationary(path: &Path) -> Result<bool> {
    let p = read_matrix(path)?;
    let pi = stationary_distribution(&p)?;
    let residual = p
        .left_apply(pi.as_slice())
        .iter()
        .zip(pi.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let out = serde_json::json!({ "pi": pi.as_slice(), "residual": residual });
    print!("{}", to_json_pretty(&out)?);
    Ok(true)
}

pub fn check(arg: &str, conditions: Option<&[ConditionId]>) -> Result<bool> {
    let scenario = load(arg)?;
    let which = conditions.unwrap_or(&ConditionId::ALL);
    let reports = check_conditions(&scenario.family, which, &scenario.spec.check_options())?;
    print!("{}", to_json_pretty(&reports)?);
    for r in &reports {
        let expected = r
            .condition
            .parse::<ConditionId>()
            .ok()
            .and_then(|c| scenario.spec.expectations.get(&c));
        match expected {
            Some(e) => eprintln!("{}: {} (expected {e})", r.condition, r.verdict),
            None => eprintln!("{}: {}", r.condition, r.verdict),
        }
    }
    let mismatches = expectation_mismatches(&scenario.spec, &reports);
    for m in &mismatches {
        eprintln!("mismatch: {m}");
    }
    Ok(mismatches.is_empty())
}

pub struct SimulateArgs<'a> {
    pub scenario: &'a str,
    pub eps: f64,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub t: Option<Vec<f64>>,
    pub out: &'a Path,
}

/// One row per replicate: `ν`, `ξ`, the last sojourn and `ξ(t)` on the grid.
pub fn simulate(args: &SimulateArgs<'_>) -> Result<bool> {
    let scenario = load(args.scenario)?;
    let n = args.n.unwrap_or(scenario.spec.n_samples);
    let seed = args.seed.unwrap_or(scenario.spec.seed);
    let t_grid = args.t.clone().unwrap_or_else(|| scenario.spec.t_grid.clone());
    let samples = scenario.sample(args.eps, n, seed, &t_grid, workers_from_env())?;

    let mut w = csv::Writer::from_path(args.out)?;
    let mut header = vec!["replicate".to_string(), "nu".into(), "xi".into(), "last_sojourn".into()];
    header.extend(t_grid.iter().map(|t| format!("xi_t{t}")));
    w.write_record(&header)?;
    for (i, s) in samples.iter().enumerate() {
        let mut rec = vec![i.to_string(), s.nu.to_string(), s.xi.to_string(), s.last_sojourn.to_string()];
        if let Some(grid) = &s.xi_grid {
            rec.extend(grid.iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    eprintln!("wrote {n} samples at eps={} to {}", args.eps, args.out.display());
    Ok(true)
}

pub struct VerifyArgs<'a> {
    pub theorem: Theorem,
    pub scenario: &'a str,
    pub eps_grid: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
    pub t: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub out: &'a Path,
    pub csv: Option<&'a Path>,
    pub force: bool,
}

pub fn verify(args: &VerifyArgs<'_>) -> Result<bool> {
    let scenario = load(args.scenario)?;
    let mut opts = scenario.spec.verify_options();
    if let Some(g) = &args.eps_grid {
        opts.eps_grid = g.clone();
    }
    if let Some(s) = &args.s {
        opts.s_grid = s.clone();
    }
    if let Some(t) = &args.t {
        opts.t_grid = t.clone();
    }
    if let Some(n) = args.n {
        opts.n_samples = n;
    }
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    opts.force = args.force;
    opts.workers = workers_from_env();
    if scenario.spec.approximate_target && args.theorem.needs_target() {
        eprintln!("note: the target cumulant of '{}' is a discretized approximation", scenario.name());
    }

    let report = run_verify(args.theorem, &scenario.family, scenario.spec.target.as_ref(), &opts)?;
    write_json(args.out, &report)?;
    if let Some(path) = args.csv {
        let mut w = csv::Writer::from_path(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }

    if let Some(mark) = &report.watermark {
        eprintln!("watermark: {mark}");
    }
    eprintln!("trend: {}", report.trend);
    for c in &report.checks {
        eprintln!("[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(report.passed())
}

pub fn scenario_list() -> Result<bool> {
    for spec in builtin_scenarios() {
        println!("{:<22} {}", spec.name, spec.description.as_deref().unwrap_or(""));
    }
    Ok(true)
}
