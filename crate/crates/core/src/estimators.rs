//! Horvitz-Thompson estimators of lag and step causal effects.
//!
//! Every per-t estimator divides the observed outcome by the adapted
//! propensity of the observed treatment suffix. The per-t series always runs
//! over `t = p+1..=T`; temporal averages divide by `T - p`.

use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::experiment::UnitExperiment;
use crate::mechanism::{arm_prob, AssignmentMechanism};

/// Predictor of the outcome at `t` built from data up to `t - p - 1`.
///
/// The rule only ever sees the truncated history, so it cannot read the
/// treatments the estimand averages over.
pub trait ProxyRule: Send + Sync {
    fn predict(&self, y_history: &[f64], w_history: &[u8]) -> f64;
}

#[derive(Clone)]
pub enum Proxy {
    Zero,
    /// `y_{t-p-1}`; zero when no earlier outcome exists.
    LaggedOutcome,
    Custom(Arc<dyn ProxyRule>),
}

impl Proxy {
    fn predict(&self, y_history: &[f64], w_history: &[u8]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::LaggedOutcome => y_history.last().copied().unwrap_or(0.0),
            Self::Custom(rule) => rule.predict(y_history, w_history),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::LaggedOutcome => "lagged-outcome",
            Self::Custom(_) => "custom",
        }
    }
}

impl fmt::Debug for Proxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Proxy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

/// Contrast between two fixed `(m+1)`-long treatment suffixes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MPeriodContrast {
    pub target: Vec<u8>,
    pub comparison: Vec<u8>,
}

impl MPeriodContrast {
    pub fn new(target: Vec<u8>, comparison: Vec<u8>) -> Result<Self> {
        if target.is_empty() || target.len() != comparison.len() {
            return Err(Error::LengthMismatch {
                what: "m-period suffixes",
                expected: target.len(),
                actual: comparison.len(),
            });
        }
        if target == comparison {
            return Err(Error::InvalidArgument("m-period suffixes must differ".into()));
        }
        if target.iter().chain(&comparison).any(|&v| v > 1) {
            return Err(Error::InvalidArgument("m-period suffixes must be binary".into()));
        }
        Ok(Self { target, comparison })
    }

    /// The horizon `m`.
    pub fn m(&self) -> usize {
        self.target.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    /// `a_w = 2^{-p}` (lag) or `2^{-(p+q)}` (step).
    #[default]
    Uniform,
}

/// Which per-t statistic to compute.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EstimandSpec {
    pub p: usize,
    pub q: usize,
    pub weights: Weights,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy: Option<Proxy>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub standardized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_period: Option<MPeriodContrast>,
}

impl EstimandSpec {
    pub fn lag(p: usize) -> Self {
        Self { p, ..Self::default() }
    }

    pub fn step(p: usize, q: usize) -> Self {
        Self { p, q, ..Self::default() }
    }

    pub fn with_proxy(mut self, proxy: Proxy) -> Self {
        self.proxy = Some(proxy);
        self
    }

    pub fn standardized(mut self) -> Self {
        self.standardized = true;
        self
    }

    pub fn m_period(contrast: MPeriodContrast) -> Self {
        Self {
            m_period: Some(contrast),
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.m_period.is_some() && (self.p != 0 || self.q != 0 || self.proxy.is_some() || self.standardized)
        {
            return Err(Error::InvalidArgument(
                "m-period mode excludes lag/step, proxy and standardized options".into(),
            ));
        }
        if self.standardized && self.proxy.is_some() {
            return Err(Error::InvalidArgument(
                "standardized statistics do not take a proxy".into(),
            ));
        }
        Ok(())
    }

    /// Number of leading periods without a contribution.
    pub fn offset(&self) -> usize {
        match &self.m_period {
            Some(c) => c.m(),
            None => self.p,
        }
    }
}

/// Borrowed view of one realized path: outcomes, treatments and the realized
/// `p_t(1)` series. The mechanism is consulted only for hypothetical suffixes.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub y: &'a [f64],
    pub w: &'a [u8],
    pub p1: &'a [f64],
    pub mechanism: &'a AssignmentMechanism,
}

impl<'a> PathView<'a> {
    pub fn new(y: &'a [f64], w: &'a [u8], p1: &'a [f64], mechanism: &'a AssignmentMechanism) -> Result<Self> {
        if w.len() != y.len() {
            return Err(Error::LengthMismatch {
                what: "treatments vs outcomes",
                expected: y.len(),
                actual: w.len(),
            });
        }
        if p1.len() != y.len() {
            return Err(Error::LengthMismatch {
                what: "probabilities vs outcomes",
                expected: y.len(),
                actual: p1.len(),
            });
        }
        Ok(Self { y, w, p1, mechanism })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Propensity of the observed treatments over 1-based times `from..=to`.
    #[inline]
    pub fn observed_propensity(&self, from: usize, to: usize) -> f64 {
        (from..=to)
            .map(|s| arm_prob(self.p1[s - 1], self.w[s - 1]))
            .product()
    }

    /// `sum over v in {0,1}^len of 1 / p_t(v)` for suffixes ending at `t`.
    fn inverse_propensity_mass(&self, t: usize, len: usize) -> Result<f64> {
        let from = t + 1 - len;
        if self.mechanism.is_history_free() {
            // The sum factorizes over periods.
            return Ok((from..=t)
                .map(|s| {
                    let p = self.p1[s - 1];
                    1.0 / (p * (1.0 - p))
                })
                .product());
        }
        let history = &self.w[..from - 1];
        let mut suffix = vec![0u8; len];
        let mut total = 0.0;
        for bits in 0..(1usize << len) {
            for (k, v) in suffix.iter_mut().enumerate() {
                *v = ((bits >> (len - 1 - k)) & 1) as u8;
            }
            total += 1.0 / self.mechanism.path_propensity(history, self.y, &suffix)?;
        }
        Ok(total)
    }
}

fn check_lag(len: usize, p: usize, q: usize) -> Result<()> {
    if p + q >= len {
        return Err(Error::InvalidArgument(format!(
            "p + q = {} must be smaller than T = {len}",
            p + q
        )));
    }
    if p + q > 52 {
        return Err(Error::InvalidArgument("p + q too large".into()));
    }
    Ok(())
}

#[inline]
fn effective_q(t: usize, p: usize, q: usize) -> usize {
    q.min(t - p - 1)
}

#[inline]
fn signed(y: f64, arm: u8) -> f64 {
    if arm == 1 {
        y
    } else {
        -y
    }
}

fn check_propensity(t: usize, prob: f64) -> Result<f64> {
    if prob > 0.0 && prob < 1.0 && prob.is_finite() {
        Ok(prob)
    } else {
        Err(Error::ProbabilityOutOfRange { t, prob })
    }
}

/// `tau-hat^{(q)}_{t,p} = 2^{-(p+q)} y_t (-1)^{1 - w_{t-p}} / p_t(w_{t-q-p:t})`,
/// with `q` reduced to `t - p - 1` near the start of the series.
pub fn ht_step_series(view: &PathView<'_>, p: usize, q: usize) -> Result<Vec<f64>> {
    check_lag(view.len(), p, q)?;
    (p + 1..=view.len())
        .map(|t| {
            let qe = effective_q(t, p, q);
            let prob = check_propensity(t, view.observed_propensity(t - p - qe, t))?;
            let weight = 0.5f64.powi((p + qe) as i32);
            Ok(weight * signed(view.y[t - 1], view.w[t - p - 1]) / prob)
        })
        .collect()
}

pub fn ht_lag_series(view: &PathView<'_>, p: usize) -> Result<Vec<f64>> {
    ht_step_series(view, p, 0)
}

/// Realized-path estimate of the variance upper bound,
/// `a^2 y_t^2 [1 + 2 P (2^{p+q} - 1)] / P^2` with `P` the observed suffix
/// propensity and `a = 2^{-(p+q)}`.
pub fn variance_bound_series(view: &PathView<'_>, p: usize, q: usize) -> Result<Vec<f64>> {
    check_lag(view.len(), p, q)?;
    (p + 1..=view.len())
        .map(|t| {
            let qe = effective_q(t, p, q);
            let prob = check_propensity(t, view.observed_propensity(t - p - qe, t))?;
            let k = (p + qe) as i32;
            let a2 = 0.25f64.powi(k);
            let y = view.y[t - 1];
            Ok(a2 * y * y * (1.0 + 2.0 * prob * (2f64.powi(k) - 1.0)) / (prob * prob))
        })
        .collect()
}

/// Outcomes net of the proxy prediction: `y_t - mu~_{t|t-p-1}` for `t = p+1..=T`.
fn proxy_residuals(view: &PathView<'_>, p: usize, proxy: &Proxy) -> Vec<f64> {
    (p + 1..=view.len())
        .map(|t| {
            let cut = t - p - 1;
            view.y[t - 1] - proxy.predict(&view.y[..cut], &view.w[..cut])
        })
        .collect()
}

/// `tau~_{t,p} = 2^{-p} (y_t - mu~) (-1)^{1 - w_{t-p}} / p_t(w_{t-p:t})`.
pub fn proxy_series(view: &PathView<'_>, p: usize, proxy: &Proxy) -> Result<Vec<f64>> {
    check_lag(view.len(), p, 0)?;
    let resid = proxy_residuals(view, p, proxy);
    let weight = 0.5f64.powi(p as i32);
    (p + 1..=view.len())
        .zip(resid)
        .map(|(t, r)| {
            let prob = check_propensity(t, view.observed_propensity(t - p, t))?;
            Ok(weight * signed(r, view.w[t - p - 1]) / prob)
        })
        .collect()
}

/// Variance-bound series for the proxy-adjusted estimator (the bound with
/// `y_t` replaced by the residual).
pub fn proxy_variance_bound_series(view: &PathView<'_>, p: usize, proxy: &Proxy) -> Result<Vec<f64>> {
    check_lag(view.len(), p, 0)?;
    let resid = proxy_residuals(view, p, proxy);
    let a2 = 0.25f64.powi(p as i32);
    let factor = 2f64.powi(p as i32) - 1.0;
    (p + 1..=view.len())
        .zip(resid)
        .map(|(t, r)| {
            let prob = check_propensity(t, view.observed_propensity(t - p, t))?;
            Ok(a2 * r * r * (1.0 + 2.0 * prob * factor) / (prob * prob))
        })
        .collect()
}

/// Sharp-null variance of the lag/step estimator at each `t`:
/// `a^2 y_t^2 sum_v 1/p_t(v)` over all suffixes `v` of length `p + q + 1`.
pub fn null_variance_series(view: &PathView<'_>, p: usize, q: usize) -> Result<Vec<f64>> {
    check_lag(view.len(), p, q)?;
    (p + 1..=view.len())
        .map(|t| {
            let qe = effective_q(t, p, q);
            let k = p + qe;
            let y = view.y[t - 1];
            Ok(0.25f64.powi(k as i32) * y * y * view.inverse_propensity_mass(t, k + 1)?)
        })
        .collect()
}

/// `v_{t,p} = tau-hat_{t,p} / sqrt(sharp-null variance)`, with `v = 0` when
/// `y_t = 0`.
pub fn standardized_series(view: &PathView<'_>, p: usize) -> Result<Vec<f64>> {
    check_lag(view.len(), p, 0)?;
    (p + 1..=view.len())
        .map(|t| {
            let y = view.y[t - 1];
            if y == 0.0 {
                return Ok(0.0);
            }
            let prob = check_propensity(t, view.observed_propensity(t - p, t))?;
            let mass = view.inverse_propensity_mass(t, p + 1)?;
            // The weight 2^{-p} and |y_t| cancel between numerator and denominator.
            Ok(signed(y.signum(), view.w[t - p - 1]) / (prob * mass.sqrt()))
        })
        .collect()
}

/// `tau-hat_t(w, w') = (1{suffix = w}/p_t(w) - 1{suffix = w'}/p_t(w')) y_t`
/// for `t = m+1..=T`.
pub fn m_period_series(view: &PathView<'_>, contrast: &MPeriodContrast) -> Result<Vec<f64>> {
    let m = contrast.m();
    check_lag(view.len(), m, 0)?;
    (m + 1..=view.len())
        .map(|t| {
            let observed = &view.w[t - m - 1..t];
            let arm = if observed == contrast.target.as_slice() {
                &contrast.target
            } else if observed == contrast.comparison.as_slice() {
                &contrast.comparison
            } else {
                return Ok(0.0);
            };
            let history = &view.w[..t - m - 1];
            let prob = if view.mechanism.is_history_free() {
                view.observed_propensity(t - m, t)
            } else {
                view.mechanism.path_propensity(history, view.y, arm)?
            };
            let prob = check_propensity(t, prob)?;
            let sign = if arm == &contrast.target { 1.0 } else { -1.0 };
            Ok(sign * view.y[t - 1] / prob)
        })
        .collect()
}

/// Per-t contributions of a statistic along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    /// 1-based time of the first contribution.
    pub first_t: usize,
    pub tau: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// Per-t statistic and its variance-bound series.
///
/// For standardized statistics the second series is the exact sharp-null
/// variance (`1` when `y_t != 0`); for m-period contrasts it is the squared
/// contribution.
pub fn contributions(view: &PathView<'_>, spec: &EstimandSpec) -> Result<Contributions> {
    spec.check()?;
    let first_t = spec.offset() + 1;
    let (tau, sigma2) = if let Some(contrast) = &spec.m_period {
        let tau = m_period_series(view, contrast)?;
        let s2 = tau.iter().map(|v| v * v).collect();
        (tau, s2)
    } else if spec.standardized {
        if spec.q != 0 {
            return Err(Error::InvalidArgument("standardized statistics take q = 0".into()));
        }
        let tau = standardized_series(view, spec.p)?;
        let s2 = view.y[spec.p..]
            .iter()
            .map(|&y| if y == 0.0 { 0.0 } else { 1.0 })
            .collect();
        (tau, s2)
    } else if let Some(proxy) = &spec.proxy {
        if spec.q != 0 {
            return Err(Error::InvalidArgument("proxy adjustment takes q = 0".into()));
        }
        (
            proxy_series(view, spec.p, proxy)?,
            proxy_variance_bound_series(view, spec.p, proxy)?,
        )
    } else {
        (
            ht_step_series(view, spec.p, spec.q)?,
            variance_bound_series(view, spec.p, spec.q)?,
        )
    };
    Ok(Contributions { first_t, tau, sigma2 })
}

/// Temporal mean of the per-t statistic only, without the bound series.
pub fn statistic_mean(view: &PathView<'_>, spec: &EstimandSpec) -> Result<f64> {
    let tau = if let Some(contrast) = &spec.m_period {
        m_period_series(view, contrast)?
    } else if spec.standardized {
        standardized_series(view, spec.p)?
    } else if let Some(proxy) = &spec.proxy {
        proxy_series(view, spec.p, proxy)?
    } else {
        ht_step_series(view, spec.p, spec.q)?
    };
    Ok(sum_in_order(&tau) / tau.len() as f64)
}

/// Sharp-null variance series matching [`contributions`].
pub fn null_variance(view: &PathView<'_>, spec: &EstimandSpec) -> Result<Vec<f64>> {
    spec.check()?;
    if let Some(contrast) = &spec.m_period {
        let m = contrast.m();
        check_lag(view.len(), m, 0)?;
        return (m + 1..=view.len())
            .map(|t| {
                let history = &view.w[..t - m - 1];
                let pw = view.mechanism.path_propensity(history, view.y, &contrast.target)?;
                let pc = view.mechanism.path_propensity(history, view.y, &contrast.comparison)?;
                let y = view.y[t - 1];
                Ok(y * y * (1.0 / pw + 1.0 / pc))
            })
            .collect();
    }
    if spec.standardized {
        check_lag(view.len(), spec.p, 0)?;
        return Ok(view.y[spec.p..]
            .iter()
            .map(|&y| if y == 0.0 { 0.0 } else { 1.0 })
            .collect());
    }
    if let Some(proxy) = &spec.proxy {
        check_lag(view.len(), spec.p, 0)?;
        let resid = proxy_residuals(view, spec.p, proxy);
        let a2 = 0.25f64.powi(spec.p as i32);
        return (spec.p + 1..=view.len())
            .zip(resid)
            .map(|(t, r)| Ok(a2 * r * r * view.inverse_propensity_mass(t, spec.p + 1)?))
            .collect();
    }
    null_variance_series(view, spec.p, spec.q)
}

#[inline]
pub(crate) fn sum_in_order(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerT {
    pub t: usize,
    pub tau_hat: f64,
    pub sigma2_hat: f64,
}

/// Temporal average of a per-t series together with its variance bound.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    #[serde(flatten)]
    pub estimand: EstimandSpec,
    pub tau_bar_hat: f64,
    pub gamma_hat: f64,
    #[serde(rename = "T_effective")]
    pub t_effective: usize,
    pub per_t: Vec<PerT>,
}

impl EstimateResult {
    /// `tau_bar_hat +- z sqrt(gamma_hat)`.
    pub fn confidence_interval(&self, z: f64) -> (f64, f64) {
        let half = z * self.gamma_hat.sqrt();
        (self.tau_bar_hat - half, self.tau_bar_hat + half)
    }
}

/// `tau_bar = (T-p)^{-1} sum tau_t` and `gamma = (T-p)^{-2} sum sigma2_t`,
/// summed in ascending `t`.
pub fn average_estimate(
    estimand: EstimandSpec,
    first_t: usize,
    tau: &[f64],
    sigma2: &[f64],
) -> Result<EstimateResult> {
    if tau.is_empty() {
        return Err(Error::Empty("per-t series"));
    }
    if tau.len() != sigma2.len() {
        return Err(Error::LengthMismatch {
            what: "bound series vs estimate series",
            expected: tau.len(),
            actual: sigma2.len(),
        });
    }
    let n = tau.len() as f64;
    let tau_bar_hat = sum_in_order(tau) / n;
    let gamma_hat = sum_in_order(sigma2) / (n * n);
    let per_t = tau
        .iter()
        .zip(sigma2)
        .enumerate()
        .map(|(i, (&tau_hat, &sigma2_hat))| PerT {
            t: first_t + i,
            tau_hat,
            sigma2_hat,
        })
        .collect();
    Ok(EstimateResult {
        estimand,
        tau_bar_hat,
        gamma_hat,
        t_effective: tau.len(),
        per_t,
    })
}

fn with_view<T>(e: &UnitExperiment, f: impl FnOnce(&PathView<'_>) -> Result<T>) -> Result<T> {
    let p1 = e.propensities()?;
    let view = PathView::new(&e.outcomes, &e.treatments, &p1, &e.mechanism)?;
    f(&view)
}

/// `tau-hat_{t,p}` for `t = p+1..=T`.
pub fn ht_lag_estimate(e: &UnitExperiment, p: usize) -> Result<Vec<f64>> {
    with_view(e, |v| ht_lag_series(v, p))
}

/// `tau-hat^{(q)}_{t,p}` for `t = p+1..=T`.
pub fn ht_step_estimate(e: &UnitExperiment, p: usize, q: usize) -> Result<Vec<f64>> {
    with_view(e, |v| ht_step_series(v, p, q))
}

/// `sigma-hat^2_t` for `t = p+1..=T`.
pub fn variance_bound(e: &UnitExperiment, p: usize, q: usize) -> Result<Vec<f64>> {
    with_view(e, |v| variance_bound_series(v, p, q))
}

pub fn proxy_adjusted_estimate(e: &UnitExperiment, p: usize, proxy: &Proxy) -> Result<Vec<f64>> {
    with_view(e, |v| proxy_series(v, p, proxy))
}

pub fn standardized_estimate(e: &UnitExperiment, p: usize) -> Result<Vec<f64>> {
    with_view(e, |v| standardized_series(v, p))
}

pub fn m_period_estimate(e: &UnitExperiment, contrast: &MPeriodContrast) -> Result<Vec<f64>> {
    with_view(e, |v| m_period_series(v, contrast))
}

/// Full estimate (per-t series, temporal mean, variance bound) for one unit.
pub fn estimate(e: &UnitExperiment, spec: &EstimandSpec) -> Result<EstimateResult> {
    with_view(e, |v| {
        let c = contributions(v, spec)?;
        average_estimate(spec.clone(), c.first_t, &c.tau, &c.sigma2)
    })
}
