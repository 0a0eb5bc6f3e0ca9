use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use tsexp_core::estimators::{estimate, EstimateResult};
use tsexp_core::inference::{conservative_test, exact_test};
use tsexp_core::io::{read_experiment_table, read_panel_csv, write_experiment_csv, MechanismConfig};
use tsexp_core::pooling::{pooled_conservative_test, pooled_exact_test, pooled_fisher_test};
use tsexp_core::process::{simulate, true_lag_effect, PotentialProcessSpec};
use tsexp_core::slippage::{format_timestamp, orders_to_experiment, read_orders_csv};
use tsexp_core::{
    validate_experiment, Alternative, AssignmentMechanism, EstimandSpec, ExactOptions, MPeriodContrast, Proxy,
    TestResult, TieRule, TreatmentPath, UnitExperiment,
};

use crate::args::*;
use crate::output::{create, write_csv, write_json};
use crate::ValidationFailed;

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.output_dir.as_path();
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a, out),
        Command::Estimate(a) => estimate_cmd(a, out),
        Command::Test(a) => test_cmd(a, out),
        Command::Pool(a) => pool_cmd(a, out),
        Command::Slip(a) => slip_cmd(a, out),
        Command::Replicate(a) => crate::replicate::run(a, out),
    }
}

pub fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.with_context(|| format!("{what} is stochastic: pass --seed"))
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("--alpha must lie in (0, 1), got {alpha}");
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn mechanism_config(path: &Path) -> Result<MechanismConfig> {
    MechanismConfig::from_json(&read_text(path)?).with_context(|| format!("parsing mechanism {}", path.display()))
}

pub fn tie_rule(a: TieRuleArg) -> TieRule {
    match a {
        TieRuleArg::Strict => TieRule::Strict,
        TieRuleArg::AddOne => TieRule::AddOne,
    }
}

fn alternative(a: AlternativeArg) -> Alternative {
    match a {
        AlternativeArg::TwoSided => Alternative::TwoSided,
        AlternativeArg::Greater => Alternative::Greater,
        AlternativeArg::Less => Alternative::Less,
    }
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => bail!("treatment suffix may contain only 0 and 1, found {other:?}"),
        })
        .collect()
}

fn estimand_specs(a: &EstimandArgs) -> Result<Vec<EstimandSpec>> {
    if let Some(m) = &a.m_period {
        let (target, comparison) = m
            .split_once(':')
            .context("--m-period expects TARGET:COMPARISON, e.g. 11:00")?;
        let contrast = MPeriodContrast::new(parse_bits(target)?, parse_bits(comparison)?)?;
        return Ok(vec![EstimandSpec::m_period(contrast)]);
    }
    let mut specs = Vec::with_capacity(a.p.len());
    for &p in &a.p {
        let mut s = EstimandSpec::step(p, a.q);
        if let Some(proxy) = a.proxy {
            s = s.with_proxy(match proxy {
                ProxyArg::Zero => Proxy::Zero,
                ProxyArg::Lagged => Proxy::LaggedOutcome,
            });
        }
        if a.standardized {
            s = s.standardized();
        }
        s.check()?;
        specs.push(s);
    }
    Ok(specs)
}

fn validated(e: UnitExperiment) -> Result<UnitExperiment> {
    let report = validate_experiment(&e);
    if report.is_empty() {
        return Ok(e);
    }
    let lines: Vec<String> = report.iter().map(|v| format!("  {} {v}", e.unit_id)).collect();
    Err(ValidationFailed(lines.join("\n")).into())
}

fn load_experiment(a: &InputArgs) -> Result<UnitExperiment> {
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let table = read_experiment_table(file).with_context(|| format!("reading {}", a.input.display()))?;
    let mechanism = match &a.mechanism {
        Some(path) => Some(mechanism_config(path)?.resolve(table.timestamps()?.as_deref())?),
        None => None,
    };
    validated(table.into_experiment(&a.unit_id, mechanism)?)
}

#[derive(Serialize)]
struct TrueEffect {
    p: usize,
    tau_bar: f64,
    per_t: Vec<f64>,
}

#[derive(Serialize)]
struct Truth<'a> {
    seed: u64,
    #[serde(rename = "T")]
    len: usize,
    spec: &'a PotentialProcessSpec,
    mechanism: String,
    true_lag_effects: Vec<TrueEffect>,
    epsilon: &'a [f64],
}

fn simulate_cmd(a: &SimulateArgs, out: &Path) -> Result<()> {
    let seed = require_seed(a.seed, "simulate")?;
    let spec = PotentialProcessSpec::from_json(&read_text(&a.spec)?)?;
    spec.validate()
        .context("the process needs sigma0 > 0 and sigma1 > 0 for downstream testing")?;
    let mechanism = match &a.mechanism {
        Some(path) => mechanism_config(path)?.resolve(None)?,
        None => AssignmentMechanism::bernoulli(0.5)?,
    };
    if a.len == 0 {
        bail!("--T must be at least 1");
    }
    let sim = simulate(&spec, &mechanism, a.len, seed)?;
    let e = UnitExperiment::new(
        a.unit_id.clone(),
        (1..=a.len as i64).collect(),
        sim.outcomes.clone(),
        TreatmentPath::new(sim.treatments.clone())?,
        mechanism.clone(),
        Some(sim.p1.clone()),
    )?;
    let (path, w) = create(out, "experiment.csv")?;
    write_experiment_csv(w, &e, None, false)?;

    let true_lag_effects = (0..=a.max_p.min(a.len - 1))
        .map(|p| {
            let per_t = true_lag_effect(&spec, &sim.noise, &sim.treatments, p)?;
            Ok(TrueEffect {
                p,
                tau_bar: per_t.iter().sum::<f64>() / per_t.len() as f64,
                per_t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = Truth {
        seed,
        len: a.len,
        spec: &spec,
        mechanism: format!("{mechanism:?}"),
        true_lag_effects,
        epsilon: &sim.noise.epsilon,
    };
    let tpath = write_json(out, "truth.json", &truth)?;
    println!("wrote {} and {}", path.display(), tpath.display());
    Ok(())
}

fn print_estimate(r: &EstimateResult) {
    let (lo, hi) = r.confidence_interval(1.96);
    println!(
        "p={} q={} tau_bar_hat={:.6} gamma_hat={:.6} ci95=[{:.6}, {:.6}] T_eff={}",
        r.estimand.p, r.estimand.q, r.tau_bar_hat, r.gamma_hat, lo, hi, r.t_effective
    );
}

fn estimate_cmd(a: &EstimateArgs, out: &Path) -> Result<()> {
    let e = load_experiment(&a.input)?;
    let results = estimand_specs(&a.estimand)?
        .iter()
        .map(|s| estimate(&e, s))
        .collect::<tsexp_core::Result<Vec<_>>>()?;
    results.iter().for_each(print_estimate);
    write_json(out, "estimate.json", &results)?;
    Ok(())
}

fn draws_rows(draws: &[f64]) -> Vec<DrawRow> {
    draws
        .iter()
        .enumerate()
        .map(|(replicate, &statistic)| DrawRow { replicate, statistic })
        .collect()
}

#[derive(Serialize)]
struct DrawRow {
    replicate: usize,
    statistic: f64,
}

fn print_test(r: &TestResult, alpha: f64) {
    let verdict = if r.p_value <= alpha { "reject" } else { "retain" };
    println!(
        "{} p={} q={} estimate={:.6} statistic={:.6} p_value={} ({verdict} at alpha={alpha})",
        r.method, r.p, r.q, r.estimate, r.statistic, r.p_value
    );
}

fn test_cmd(a: &TestArgs, out: &Path) -> Result<()> {
    check_alpha(a.testing.alpha)?;
    let e = load_experiment(&a.input)?;
    let specs = estimand_specs(&a.estimand)?;
    let run_exact = a.method != TestMethodArg::Conservative;
    let run_clt = a.method != TestMethodArg::Exact;
    let seed = if run_exact { Some(require_seed(a.testing.seed, "the exact test")?) } else { None };
    let options = ExactOptions {
        tie_rule: tie_rule(a.testing.tie_rule),
        alternative: alternative(a.testing.alternative),
        keep_draws: a.testing.keep_draws,
    };
    let mut results = Vec::new();
    for spec in &specs {
        if let Some(seed) = seed {
            let r = exact_test(&e, spec, a.testing.replicates, seed, options)?;
            if let Some(draws) = &r.null_draws {
                let name = format!("null_draws_p{}_q{}.csv", spec.p, spec.q);
                write_csv(out, &name, &draws_rows(draws))?;
            }
            results.push(r);
        }
        if run_clt {
            match conservative_test(&e, spec, options.alternative) {
                Ok(r) => results.push(r),
                Err(tsexp_core::Error::DegenerateVariance) if run_exact => {
                    eprintln!("conservative test undefined for p={}: every variance bound is zero", spec.p)
                }
                Err(err) => return Err(err.into()),
            }
        }
    }
    for r in &results {
        print_test(r, a.testing.alpha);
    }
    write_json(out, "test.json", &results)?;
    Ok(())
}

fn pool_cmd(a: &PoolArgs, out: &Path) -> Result<()> {
    check_alpha(a.testing.alpha)?;
    let mechanism = match &a.mechanism {
        Some(path) => Some(mechanism_config(path)?.resolve(None)?),
        None => None,
    };
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let panel = read_panel_csv(file, mechanism, a.independent_units)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut report = Vec::new();
    for u in panel.units() {
        report.extend(validate_experiment(u).iter().map(|v| format!("  {} {v}", u.unit_id)));
    }
    if !report.is_empty() {
        return Err(ValidationFailed(report.join("\n")).into());
    }
    let specs = estimand_specs(&a.estimand)?;
    let options = ExactOptions {
        tie_rule: tie_rule(a.testing.tie_rule),
        alternative: alternative(a.testing.alternative),
        keep_draws: false,
    };
    let wants = |m: PoolMethodArg| a.method == m || a.method == PoolMethodArg::All;
    let mut results = Vec::new();
    for spec in &specs {
        if wants(PoolMethodArg::Exact) {
            let seed = require_seed(a.testing.seed, "the pooled exact test")?;
            results.push(pooled_exact_test(&panel, spec, a.testing.replicates, seed, options)?);
        }
        if wants(PoolMethodArg::Conservative) {
            if panel.independent {
                results.push(pooled_conservative_test(&panel, spec, options.alternative)?);
            } else if a.method == PoolMethodArg::Conservative {
                bail!(
                    "the pooled conservative test assumes independently assigned units; \
                     pass --independent-units if that holds"
                );
            } else {
                eprintln!("skipping pooled conservative test: --independent-units not set");
            }
        }
        if wants(PoolMethodArg::Fisher) {
            let seed = require_seed(a.testing.seed, "Fisher's method over exact tests")?;
            results.push(pooled_fisher_test(&panel, spec, a.testing.replicates, seed, options)?);
        }
    }
    for r in &results {
        println!(
            "{} p={} q={} statistic={:.6} pooled={} p_value={}",
            r.method,
            r.p,
            r.q,
            r.statistic,
            r.tau_bar_pooled.map_or("-".to_string(), |v| format!("{v:.6}")),
            r.p_value
        );
    }
    write_json(out, "pool.json", &results)?;
    Ok(())
}

fn slip_cmd(a: &SlipArgs, out: &Path) -> Result<()> {
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut orders = read_orders_csv(file).with_context(|| format!("reading {}", a.input.display()))?;
    tsexp_core::slippage::sort_orders(&mut orders);
    let stamps: Vec<_> = orders.iter().map(|o| o.randomization_time).collect();
    let mechanism = mechanism_config(&a.mechanism)?.resolve(Some(&stamps))?;
    let (e, stamps) = orders_to_experiment(orders, &a.unit_id, mechanism)?;
    let e = validated(e)?;
    let labels: Vec<String> = stamps.iter().map(format_timestamp).collect();
    let (path, w) = create(out, "experiment.csv")?;
    write_experiment_csv(w, &e, Some(&labels), false)?;
    println!("wrote {} ({} orders)", path.display(), e.len());
    Ok(())
}
