//! Randomization tests of the sharp null and CLT tests of no average effect.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{contributions, statistic_mean, EstimandSpec, PathView};
use crate::experiment::UnitExperiment;
use crate::mechanism::{sample_into, AssignmentMechanism};
use crate::process::{simulate, PotentialProcessSpec};
use crate::rng::{derive_seed, stream_rng};

/// Below this many contributions the normal reference is flagged as rough.
pub const CLT_MIN_EFFECTIVE_T: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// `M^{-1} #{|draw| > |obs|}`.
    #[default]
    Strict,
    /// `(1 + #{|draw| >= |obs|}) / (M + 1)`.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactRandomization,
    ConservativeClt,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ExactRandomization => "exact-randomization",
            Self::ConservativeClt => "conservative-clt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExactOptions {
    pub tie_rule: TieRule,
    pub alternative: Alternative,
    /// Keep the replicate statistics in the result.
    pub keep_draws: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub method: Method,
    /// Observed test statistic: the temporal mean for the exact test, `Z~`
    /// for the CLT test.
    pub statistic: f64,
    /// Observed temporal mean of the per-t statistic.
    pub estimate: f64,
    pub p_value: f64,
    pub p: usize,
    pub q: usize,
    pub alternative: Alternative,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie_rule: Option<TieRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    pub conservative: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub null_draws: Option<Vec<f64>>,
}

/// Randomization p-value of `observed` against replicate statistics.
pub fn randomization_p_value(observed: f64, draws: &[f64], tie_rule: TieRule, alternative: Alternative) -> f64 {
    let m = draws.len() as f64;
    let exceeds = |d: f64, inclusive: bool| -> bool {
        let (a, b) = match alternative {
            Alternative::TwoSided => (d.abs(), observed.abs()),
            Alternative::Greater => (d, observed),
            Alternative::Less => (-d, -observed),
        };
        if inclusive {
            a >= b
        } else {
            a > b
        }
    };
    match tie_rule {
        TieRule::Strict => draws.iter().filter(|&&d| exceeds(d, false)).count() as f64 / m,
        TieRule::AddOne => (1.0 + draws.iter().filter(|&&d| exceeds(d, true)).count() as f64) / (m + 1.0),
    }
}

/// Replicate statistics under the sharp null: replicate `m` draws its own
/// treatment path (and probability path) from stream `derive_seed(seed, m)`
/// and recomputes the temporal mean on the observed outcomes.
pub fn null_distribution(
    y_obs: &[f64],
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("number of replicates M must be at least 1".into()));
    }
    (0..replicates)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(y_obs.len()), Vec::with_capacity(y_obs.len())),
            |(w, p1), m| replicate_statistic(y_obs, mechanism, spec, derive_seed(seed, m as u64), w, p1),
        )
        .collect()
}

/// Single-threaded form of [`null_distribution`] with identical output.
pub fn null_distribution_serial(
    y_obs: &[f64],
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("number of replicates M must be at least 1".into()));
    }
    let mut w = Vec::with_capacity(y_obs.len());
    let mut p1 = Vec::with_capacity(y_obs.len());
    (0..replicates)
        .map(|m| replicate_statistic(y_obs, mechanism, spec, derive_seed(seed, m as u64), &mut w, &mut p1))
        .collect()
}

pub(crate) fn replicate_statistic(
    y_obs: &[f64],
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    stream_seed: u64,
    w: &mut Vec<u8>,
    p1: &mut Vec<f64>,
) -> Result<f64> {
    let mut rng = stream_rng(stream_seed);
    sample_into(mechanism, y_obs, y_obs.len(), &mut rng, w, p1)?;
    let view = PathView::new(y_obs, w, p1, mechanism)?;
    statistic_mean(&view, spec)
}

#[allow(clippy::too_many_arguments)]
fn exact_from_parts(
    y: &[f64],
    w: &[u8],
    p1: &[f64],
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    replicates: usize,
    seed: u64,
    options: ExactOptions,
    parallel: bool,
) -> Result<TestResult> {
    spec.check()?;
    let view = PathView::new(y, w, p1, mechanism)?;
    let observed = statistic_mean(&view, spec)?;
    let draws = if parallel {
        null_distribution(y, mechanism, spec, replicates, seed)?
    } else {
        null_distribution_serial(y, mechanism, spec, replicates, seed)?
    };
    let p_value = randomization_p_value(observed, &draws, options.tie_rule, options.alternative);
    let mut warnings = Vec::new();
    if y.iter().all(|&v| v == 0.0) {
        let msg = format!(
            "all outcomes are zero: every replicate ties the observed statistic (p = {p_value} under the {:?} rule)",
            options.tie_rule
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(TestResult {
        method: Method::ExactRandomization,
        statistic: observed,
        estimate: observed,
        p_value,
        p: spec.p,
        q: spec.q,
        alternative: options.alternative,
        replicates: Some(replicates),
        seed: Some(seed),
        tie_rule: Some(options.tie_rule),
        gamma_hat: None,
        conservative: false,
        warnings,
        null_draws: options.keep_draws.then_some(draws),
    })
}

/// Monte Carlo randomization test of the sharp null of no temporal effects.
pub fn exact_test(
    e: &UnitExperiment,
    spec: &EstimandSpec,
    replicates: usize,
    seed: u64,
    options: ExactOptions,
) -> Result<TestResult> {
    let p1 = e.propensities()?;
    exact_from_parts(&e.outcomes, &e.treatments, &p1, &e.mechanism, spec, replicates, seed, options, true)
}

/// Normal-reference p-value for a standardized statistic.
pub fn normal_p_value(z: f64, alternative: Alternative) -> f64 {
    let n = Normal::standard();
    match alternative {
        Alternative::TwoSided => (2.0 * n.sf(z.abs())).min(1.0),
        Alternative::Greater => n.sf(z),
        Alternative::Less => n.cdf(z),
    }
}

fn conservative_from_view(view: &PathView<'_>, spec: &EstimandSpec, alternative: Alternative) -> Result<TestResult> {
    let c = contributions(view, spec)?;
    if c.sigma2.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let n = c.tau.len() as f64;
    let tau_bar = c.tau.iter().sum::<f64>() / n;
    let gamma_hat = c.sigma2.iter().sum::<f64>() / (n * n);
    let z = tau_bar / gamma_hat.sqrt();
    let mut warnings = Vec::new();
    if c.tau.len() < CLT_MIN_EFFECTIVE_T {
        let msg = format!(
            "only {} contributions; the normal reference may be inaccurate below {CLT_MIN_EFFECTIVE_T}",
            c.tau.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(TestResult {
        method: Method::ConservativeClt,
        statistic: z,
        estimate: tau_bar,
        p_value: normal_p_value(z, alternative),
        p: spec.p,
        q: spec.q,
        alternative,
        replicates: None,
        seed: None,
        tie_rule: None,
        gamma_hat: Some(gamma_hat),
        conservative: true,
        warnings,
        null_draws: None,
    })
}

/// `Z~ = tau_bar / sqrt(gamma_hat)` against the standard normal. The
/// variance bound overstates the variance, so the test rejects at or below
/// the nominal rate asymptotically.
pub fn conservative_test(e: &UnitExperiment, spec: &EstimandSpec, alternative: Alternative) -> Result<TestResult> {
    let p1 = e.propensities()?;
    let view = PathView::new(&e.outcomes, &e.treatments, &p1, &e.mechanism)?;
    conservative_from_view(&view, spec, alternative)
}

/// One point of a power study.
#[derive(Debug, Clone)]
pub struct PowerPoint {
    /// Value reported in the output table (effect size, `phi`, ...).
    pub label: f64,
    pub process: PotentialProcessSpec,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerConfig {
    pub len: usize,
    pub replicates: usize,
    pub outer: usize,
    pub alpha: f64,
    pub tie_rule: TieRule,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerRow {
    pub label: f64,
    pub exact_rejection: f64,
    pub exact_se: f64,
    pub conservative_rejection: f64,
    pub conservative_se: f64,
    pub outer: usize,
}

/// p-values of both tests on one freshly simulated dataset.
pub fn simulate_and_test(
    process: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    len: usize,
    replicates: usize,
    tie_rule: TieRule,
    seed: u64,
) -> Result<(f64, Option<f64>)> {
    let sim = simulate(process, mechanism, len, derive_seed(seed, 0))?;
    let options = ExactOptions {
        tie_rule,
        ..ExactOptions::default()
    };
    let exact = exact_from_parts(
        &sim.outcomes,
        &sim.treatments,
        &sim.p1,
        mechanism,
        spec,
        replicates,
        derive_seed(seed, 1),
        options,
        false,
    )?;
    let view = PathView::new(&sim.outcomes, &sim.treatments, &sim.p1, mechanism)?;
    let clt = match conservative_from_view(&view, spec, Alternative::TwoSided) {
        Ok(r) => Some(r.p_value),
        Err(Error::DegenerateVariance) => None,
        Err(e) => return Err(e),
    };
    Ok((exact.p_value, clt))
}

fn rate_and_se(hits: usize, n: usize) -> (f64, f64) {
    let r = hits as f64 / n as f64;
    (r, (r * (1.0 - r) / n as f64).sqrt())
}

/// Rejection rates of both tests at level `alpha` across a grid of data
/// generating processes. Outer replication `r` of grid point `g` uses
/// stream `derive_seed(derive_seed(seed, g), r)`.
pub fn power_curve(
    grid: &[PowerPoint],
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    config: PowerConfig,
) -> Result<Vec<PowerRow>> {
    if grid.is_empty() {
        return Err(Error::Empty("power grid"));
    }
    if config.outer == 0 {
        return Err(Error::InvalidArgument("outer replications must be at least 1".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {} is not in (0, 1)", config.alpha)));
    }
    grid.iter()
        .enumerate()
        .map(|(g, point)| {
            let point_seed = derive_seed(config.seed, g as u64);
            let pvals = (0..config.outer)
                .into_par_iter()
                .map(|r| {
                    simulate_and_test(
                        &point.process,
                        mechanism,
                        spec,
                        config.len,
                        config.replicates,
                        config.tie_rule,
                        derive_seed(point_seed, r as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let exact_hits = pvals.iter().filter(|(e, _)| *e <= config.alpha).count();
            let clt_hits = pvals
                .iter()
                .filter(|(_, c)| c.is_some_and(|c| c <= config.alpha))
                .count();
            let (exact_rejection, exact_se) = rate_and_se(exact_hits, config.outer);
            let (conservative_rejection, conservative_se) = rate_and_se(clt_hits, config.outer);
            Ok(PowerRow {
                label: point.label,
                exact_rejection,
                exact_se,
                conservative_rejection,
                conservative_se,
                outer: config.outer,
            })
        })
        .collect()
}
