//! Pooling lag-effect estimates and tests across units.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimators::{contributions, null_variance, statistic_mean, EstimandSpec, PathView};
use crate::experiment::{Panel, UnitExperiment};
use crate::inference::{
    exact_test, normal_p_value, randomization_p_value, replicate_statistic, Alternative, ExactOptions,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMethod {
    PooledExact,
    PooledConservative,
    Fisher,
}

impl std::fmt::Display for PoolMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PooledExact => "pooled-exact",
            Self::PooledConservative => "pooled-conservative",
            Self::Fisher => "fisher",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitSummary {
    pub unit_id: String,
    pub tau_bar_hat: f64,
    /// Variance-bound estimate for the unit's temporal mean.
    pub gamma_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    /// Pooling weight; zero for units left out.
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PooledResult {
    pub method: PoolMethod,
    pub p: usize,
    pub q: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_bar_pooled: Option<f64>,
    /// Pooled mean (exact), `Z` (conservative) or `X^2` (Fisher).
    pub statistic: f64,
    pub p_value: f64,
    pub weights_used: Vec<f64>,
    pub per_unit: Vec<UnitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub null_draws: Option<Vec<f64>>,
}

/// Normalized weights `c_i ∝ 1 / v_i` from per-unit variances of the
/// temporal means. With `v_i = gamma_i^2 / (T_i - p)` this is
/// `c_i ∝ (T_i - p) / gamma_i^2`.
pub fn inverse_variance_weights(variances: &[f64]) -> Result<Vec<f64>> {
    if variances.is_empty() {
        return Err(Error::Empty("variances"));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("variance {v} must be positive and finite")));
    }
    let precision: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let total: f64 = precision.iter().sum();
    Ok(precision.into_iter().map(|p| p / total).collect())
}

/// `sum_i c_i x_i`.
pub fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(c, x)| c * x).sum()
}

struct UnitData<'a> {
    unit: &'a UnitExperiment,
    p1: Vec<f64>,
}

impl UnitData<'_> {
    fn view(&self) -> Result<PathView<'_>> {
        PathView::new(&self.unit.outcomes, &self.unit.treatments, &self.p1, &self.unit.mechanism)
    }
}

fn load(panel: &Panel) -> Result<Vec<UnitData<'_>>> {
    panel
        .units()
        .iter()
        .map(|unit| Ok(UnitData { unit, p1: unit.propensities()? }))
        .collect()
}

fn drop_warning(unit_id: &str) -> String {
    let msg = format!("unit {unit_id:?} has zero variance and is left out of the pooled statistic");
    log::warn!("{msg}");
    msg
}

/// Pooled randomization test. Per-unit sharp-null variances are fixed by the
/// observed outcomes; replicate `m` resamples unit `i` (in `unit_id` order)
/// from stream `derive_seed(derive_seed(seed, m), i)`.
pub fn pooled_exact_test(
    panel: &Panel,
    spec: &EstimandSpec,
    replicates: usize,
    seed: u64,
    options: ExactOptions,
) -> Result<PooledResult> {
    spec.check()?;
    if replicates == 0 {
        return Err(Error::InvalidArgument("number of replicates M must be at least 1".into()));
    }
    let data = load(panel)?;
    let mut warnings = Vec::new();
    let mut summaries = Vec::with_capacity(data.len());
    let mut kept = Vec::new();
    let mut kept_variances = Vec::new();
    for (i, d) in data.iter().enumerate() {
        let view = d.view()?;
        let c = contributions(&view, spec)?;
        let n = c.tau.len() as f64;
        let tau_bar = c.tau.iter().sum::<f64>() / n;
        let gamma_hat = c.sigma2.iter().sum::<f64>() / (n * n);
        let null_var = null_variance(&view, spec)?;
        // Mean per-t null variance over T_i - p; the temporal mean has variance gamma_i^2 / (T_i - p).
        let gamma2 = null_var.iter().sum::<f64>() / n;
        if gamma2 > 0.0 && gamma2.is_finite() {
            kept.push(i);
            kept_variances.push(gamma2 / n);
        } else {
            warnings.push(drop_warning(&d.unit.unit_id));
        }
        summaries.push(UnitSummary {
            unit_id: d.unit.unit_id.clone(),
            tau_bar_hat: tau_bar,
            gamma_hat,
            p_value: None,
            weight: 0.0,
        });
    }
    if kept.is_empty() {
        return Err(Error::DegenerateVariance);
    }
    let weights = inverse_variance_weights(&kept_variances)?;
    for (&i, &c) in kept.iter().zip(&weights) {
        summaries[i].weight = c;
    }
    let observed_units: Vec<f64> = kept.iter().map(|&i| summaries[i].tau_bar_hat).collect();
    let observed = weighted_mean(&weights, &observed_units);

    // Row m holds every kept unit's replicate statistic.
    let rows: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(w, p1), m| {
                let rep_seed = derive_seed(seed, m as u64);
                kept.iter()
                    .map(|&i| {
                        let u = data[i].unit;
                        replicate_statistic(&u.outcomes, &u.mechanism, spec, derive_seed(rep_seed, i as u64), w, p1)
                    })
                    .collect::<Result<Vec<f64>>>()
            },
        )
        .collect::<Result<_>>()?;
    let pooled_draws: Vec<f64> = rows.iter().map(|r| weighted_mean(&weights, r)).collect();
    let p_value = randomization_p_value(observed, &pooled_draws, options.tie_rule, options.alternative);
    for (k, &i) in kept.iter().enumerate() {
        let unit_draws: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        summaries[i].p_value = Some(randomization_p_value(
            summaries[i].tau_bar_hat,
            &unit_draws,
            options.tie_rule,
            options.alternative,
        ));
    }
    Ok(PooledResult {
        method: PoolMethod::PooledExact,
        p: spec.p,
        q: spec.q,
        tau_bar_pooled: Some(observed),
        statistic: observed,
        p_value,
        weights_used: weights,
        per_unit: summaries,
        replicates: Some(replicates),
        seed: Some(seed),
        warnings,
        null_draws: options.keep_draws.then_some(pooled_draws),
    })
}

/// Pooled CLT test with variance-bound weights `c_i ∝ 1 / gamma_hat_i`.
/// The pooled mean is compared with `N(0, 1 / sum_i gamma_hat_i^{-1})`,
/// which needs independent assignment across units.
pub fn pooled_conservative_test(panel: &Panel, spec: &EstimandSpec, alternative: Alternative) -> Result<PooledResult> {
    spec.check()?;
    if !panel.independent {
        return Err(Error::InvalidArgument(
            "the pooled conservative test needs independently assigned units; \
             its normal reference is invalid otherwise (set the independence flag if it holds)"
                .into(),
        ));
    }
    let data = load(panel)?;
    let mut warnings = Vec::new();
    let mut summaries = Vec::with_capacity(data.len());
    let mut kept = Vec::new();
    let mut kept_gamma = Vec::new();
    for (i, d) in data.iter().enumerate() {
        let c = contributions(&d.view()?, spec)?;
        let n = c.tau.len() as f64;
        let tau_bar = c.tau.iter().sum::<f64>() / n;
        let gamma_hat = c.sigma2.iter().sum::<f64>() / (n * n);
        let p_value = if gamma_hat > 0.0 {
            kept.push(i);
            kept_gamma.push(gamma_hat);
            Some(normal_p_value(tau_bar / gamma_hat.sqrt(), alternative))
        } else {
            warnings.push(drop_warning(&d.unit.unit_id));
            None
        };
        summaries.push(UnitSummary {
            unit_id: d.unit.unit_id.clone(),
            tau_bar_hat: tau_bar,
            gamma_hat,
            p_value,
            weight: 0.0,
        });
    }
    if kept.is_empty() {
        return Err(Error::DegenerateVariance);
    }
    let weights = inverse_variance_weights(&kept_gamma)?;
    for (&i, &c) in kept.iter().zip(&weights) {
        summaries[i].weight = c;
    }
    let estimates: Vec<f64> = kept.iter().map(|&i| summaries[i].tau_bar_hat).collect();
    let pooled = weighted_mean(&weights, &estimates);
    let precision: f64 = kept_gamma.iter().map(|g| 1.0 / g).sum();
    let z = pooled * precision.sqrt();
    Ok(PooledResult {
        method: PoolMethod::PooledConservative,
        p: spec.p,
        q: spec.q,
        tau_bar_pooled: Some(pooled),
        statistic: z,
        p_value: normal_p_value(z, alternative),
        weights_used: weights,
        per_unit: summaries,
        replicates: None,
        seed: None,
        warnings,
        null_draws: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub clamped: usize,
}

/// Fisher's method: `X^2 = -2 sum ln p_i` against chi-square with `2n`
/// degrees of freedom. A `p_i = 0` from a Monte Carlo test is replaced by
/// `1 / (M + 1)`, which needs `replicates`.
pub fn fisher_combine(p_values: &[f64], replicates: Option<usize>) -> Result<FisherResult> {
    if p_values.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    let mut clamped = 0;
    let mut x2 = 0.0;
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("p-value {p} is outside [0, 1]")));
        }
        let p = if p == 0.0 {
            let m = replicates.ok_or_else(|| {
                Error::InvalidArgument("p-value 0 needs the replicate count to be clamped".into())
            })?;
            clamped += 1;
            1.0 / (m as f64 + 1.0)
        } else {
            p
        };
        x2 -= 2.0 * p.ln();
    }
    if clamped > 0 {
        log::warn!("{clamped} zero p-value(s) clamped to 1/(M+1)");
    }
    let df = 2 * p_values.len();
    let chi2 = ChiSquared::new(df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(FisherResult {
        statistic: x2,
        degrees_of_freedom: df,
        p_value: chi2.sf(x2),
        clamped,
    })
}

/// Per-unit exact tests (unit `i` seeded with `derive_seed(seed, i)`) combined
/// by Fisher's method.
pub fn pooled_fisher_test(
    panel: &Panel,
    spec: &EstimandSpec,
    replicates: usize,
    seed: u64,
    options: ExactOptions,
) -> Result<PooledResult> {
    if !panel.independent {
        log::warn!("Fisher's method assumes independent unit-level tests");
    }
    let mut summaries = Vec::with_capacity(panel.len());
    let mut pvals = Vec::with_capacity(panel.len());
    for (i, u) in panel.units().iter().enumerate() {
        let r = exact_test(u, spec, replicates, derive_seed(seed, i as u64), ExactOptions { keep_draws: false, ..options })?;
        let est = crate::estimators::estimate(u, spec)?;
        pvals.push(r.p_value);
        summaries.push(UnitSummary {
            unit_id: u.unit_id.clone(),
            tau_bar_hat: est.tau_bar_hat,
            gamma_hat: est.gamma_hat,
            p_value: Some(r.p_value),
            weight: 1.0 / panel.len() as f64,
        });
    }
    let f = fisher_combine(&pvals, Some(replicates))?;
    let mut warnings = Vec::new();
    if f.clamped > 0 {
        warnings.push(format!("{} zero p-value(s) clamped to 1/(M+1)", f.clamped));
    }
    if !panel.independent {
        warnings.push("units not flagged independent; Fisher's reference distribution may not hold".into());
    }
    Ok(PooledResult {
        method: PoolMethod::Fisher,
        p: spec.p,
        q: spec.q,
        tau_bar_pooled: None,
        statistic: f.statistic,
        p_value: f.p_value,
        weights_used: vec![1.0 / panel.len() as f64; panel.len()],
        per_unit: summaries,
        replicates: Some(replicates),
        seed: Some(seed),
        warnings,
        null_draws: None,
    })
}

/// Pooled temporal mean over units with exact sharp-null weights, without
/// running a test. Used by simulation studies.
pub fn pooled_estimate(units: &[&UnitExperiment], spec: &EstimandSpec) -> Result<f64> {
    let mut est = Vec::with_capacity(units.len());
    let mut var = Vec::with_capacity(units.len());
    for u in units {
        let p1 = u.propensities()?;
        let view = PathView::new(&u.outcomes, &u.treatments, &p1, &u.mechanism)?;
        let tau_bar = statistic_mean(&view, spec)?;
        let nv = null_variance(&view, spec)?;
        let n = nv.len() as f64;
        let v = nv.iter().sum::<f64>() / (n * n);
        if v > 0.0 {
            est.push(tau_bar);
            var.push(v);
        }
    }
    if est.is_empty() {
        return Err(Error::DegenerateVariance);
    }
    Ok(weighted_mean(&inverse_variance_weights(&var)?, &est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::TreatmentPath;
    use crate::inference::TieRule;
    use crate::mechanism::AssignmentMechanism;
    use approx::assert_relative_eq;

    fn unit(id: &str, y: Vec<f64>, w: Vec<u8>) -> UnitExperiment {
        let m = AssignmentMechanism::bernoulli(0.5).unwrap();
        UnitExperiment::simple(id, y, TreatmentPath::new(w).unwrap(), m).unwrap()
    }

    fn noisy_unit(id: &str, shift: usize) -> UnitExperiment {
        let y = (0..50).map(|i| (((i + shift) * 13 % 17) as f64 - 8.0) / 4.0).collect();
        let w = (0..50).map(|i| u8::from((i + shift).is_multiple_of(3))).collect();
        unit(id, y, w)
    }

    #[test]
    fn fisher_single_identity() {
        let r = fisher_combine(&[0.05], None).unwrap();
        assert_relative_eq!(r.statistic, -2.0 * 0.05f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(r.statistic, 5.991464547107979, max_relative = 1e-12);
        assert_relative_eq!(r.p_value, 0.05, max_relative = 1e-10);
    }

    #[test]
    fn fisher_all_ones() {
        let r = fisher_combine(&[1.0, 1.0], None).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn fisher_clamps_and_rejects() {
        let r = fisher_combine(&[0.0], Some(99)).unwrap();
        assert_eq!(r.clamped, 1);
        assert_relative_eq!(r.statistic, -2.0 * 0.01f64.ln(), max_relative = 1e-14);
        assert!(fisher_combine(&[0.0], None).is_err());
        assert!(fisher_combine(&[1.2], None).is_err());
        assert!(fisher_combine(&[], None).is_err());
    }

    #[test]
    fn weights_normalize() {
        let c = inverse_variance_weights(&[1.0, 2.0, 4.0]).unwrap();
        assert_relative_eq!(c.iter().sum::<f64>(), 1.0);
        assert_relative_eq!(c[0] / c[1], 2.0);
        assert!(inverse_variance_weights(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_unit_pool_equals_unit() {
        let u = noisy_unit("a", 0);
        let panel = Panel::new(vec![u.clone()], true).unwrap();
        let spec = EstimandSpec::lag(1);
        let r = pooled_exact_test(&panel, &spec, 50, 5, ExactOptions::default()).unwrap();
        let unit_est = crate::estimators::estimate(&u, &spec).unwrap();
        assert_relative_eq!(r.tau_bar_pooled.unwrap(), unit_est.tau_bar_hat, max_relative = 1e-14);
        let single = exact_test(&u, &spec, 50, 5, ExactOptions::default()).unwrap();
        assert_relative_eq!(r.statistic, single.statistic, max_relative = 1e-14);

        let c = pooled_conservative_test(&panel, &spec, Alternative::TwoSided).unwrap();
        let s = crate::inference::conservative_test(&u, &spec, Alternative::TwoSided).unwrap();
        assert_relative_eq!(c.statistic, s.statistic, max_relative = 1e-12);
        assert_relative_eq!(c.p_value, s.p_value, max_relative = 1e-12);
    }

    #[test]
    fn identical_units_pool_to_the_unit_estimate() {
        let a = noisy_unit("a", 2);
        let mut b = a.clone();
        b.unit_id = "b".into();
        let panel = Panel::new(vec![a.clone(), b], true).unwrap();
        let r = pooled_exact_test(&panel, &EstimandSpec::lag(0), 20, 1, ExactOptions::default()).unwrap();
        assert_relative_eq!(r.weights_used[0], 0.5);
        let e = crate::estimators::estimate(&a, &EstimandSpec::lag(0)).unwrap();
        assert_relative_eq!(r.tau_bar_pooled.unwrap(), e.tau_bar_hat, max_relative = 1e-14);
    }

    #[test]
    fn zero_unit_dropped_with_warning() {
        let a = noisy_unit("a", 1);
        let z = unit("z", vec![0.0; 50], vec![1; 50]);
        let panel = Panel::new(vec![a, z], true).unwrap();
        let r = pooled_exact_test(&panel, &EstimandSpec::lag(0), 20, 1, ExactOptions::default()).unwrap();
        assert_eq!(r.weights_used, vec![1.0]);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.per_unit[1].weight, 0.0);
    }

    #[test]
    fn conservative_needs_independence() {
        let panel = Panel::new(vec![noisy_unit("a", 0), noisy_unit("b", 1)], false).unwrap();
        assert!(pooled_conservative_test(&panel, &EstimandSpec::lag(0), Alternative::TwoSided).is_err());
    }

    #[test]
    fn conservative_zero_estimates() {
        let y = vec![1.0; 40];
        let w: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let panel = Panel::new(vec![unit("a", y.clone(), w.clone()), unit("b", y, w)], true).unwrap();
        let r = pooled_conservative_test(&panel, &EstimandSpec::lag(0), Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn pooled_json_fields() {
        let panel = Panel::new(vec![noisy_unit("a", 0), noisy_unit("b", 3)], true).unwrap();
        let r = pooled_exact_test(&panel, &EstimandSpec::lag(0), 10, 1, ExactOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["method"], "pooled-exact");
        for key in ["tau_bar_pooled", "p_value", "weights_used", "per_unit"] {
            assert!(v.get(key).is_some());
        }
        for key in ["unit_id", "tau_bar_hat", "gamma_hat", "p_value"] {
            assert!(v["per_unit"][0].get(key).is_some());
        }
    }

    #[test]
    fn fisher_panel_runs() {
        let panel = Panel::new(vec![noisy_unit("a", 0), noisy_unit("b", 3)], true).unwrap();
        let opts = ExactOptions {
            tie_rule: TieRule::AddOne,
            ..ExactOptions::default()
        };
        let r = pooled_fisher_test(&panel, &EstimandSpec::lag(0), 30, 1, opts).unwrap();
        assert!(r.statistic >= 0.0 && (0.0..=1.0).contains(&r.p_value));
    }
}
