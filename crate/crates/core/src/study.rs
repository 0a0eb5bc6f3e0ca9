//! Simulation studies: sampling behaviour of the estimators and tests on
//! synthetic potential-outcome processes.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{contributions, standardized_series, EstimandSpec, PathView};
use crate::experiment::{TreatmentPath, UnitExperiment};
use crate::inference::{simulate_and_test, TieRule};
use crate::mechanism::{sample_into, AssignmentMechanism};
use crate::pooling::pooled_estimate;
use crate::process::{draw_noise, simulate_given_noise, true_step_effect, NoisePath, PotentialProcessSpec, Simulated};
use crate::rng::{derive_seed, stream_rng};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_std_error(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2) / n).sqrt()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Correlation between sorted data and normal quantiles at Blom plotting
/// positions `(i - 3/8) / (n + 1/4)`.
pub fn qq_normal_correlation(x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let normal = Normal::standard();
    let q: Vec<f64> = (1..=sorted.len())
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (n + 0.25)))
        .collect();
    pearson(&sorted, &q)
}

/// Kolmogorov-Smirnov distance between the sample and Uniform(0, 1).
pub fn ks_uniform(p: &[f64]) -> f64 {
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = v - i as f64 / n;
            let hi = (i + 1) as f64 / n - v;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// One estimator's draws across resampled treatment paths.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorDraws {
    pub label: String,
    pub tau_bar_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    /// Temporal mean of the true effect along each resampled path; `NaN`
    /// when the statistic has no matching estimand.
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ResampleStudy {
    pub noise: NoisePath,
    pub draws: Vec<EstimatorDraws>,
}

pub fn estimand_label(spec: &EstimandSpec) -> String {
    if let Some(c) = &spec.m_period {
        let fmt = |v: &[u8]| v.iter().map(u8::to_string).collect::<String>();
        return format!("m-period {} vs {}", fmt(&c.target), fmt(&c.comparison));
    }
    let mut s = format!("p={}", spec.p);
    if spec.q > 0 {
        s.push_str(&format!(",q={}", spec.q));
    }
    if spec.proxy.is_some() {
        s.push_str(",proxy");
    }
    if spec.standardized {
        s.push_str(",standardized");
    }
    s
}

fn has_truth(spec: &EstimandSpec) -> bool {
    spec.m_period.is_none() && !spec.standardized
}

/// Fixes the potential outcomes through one noise draw (stream 0 of `seed`)
/// and resamples treatment paths from the mechanism (resample `r` uses
/// `derive_seed(derive_seed(seed, 1), r)`), recording every estimator on
/// each realized path.
pub fn resample_fixed_potential(
    process: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    estimands: &[EstimandSpec],
    len: usize,
    resamples: usize,
    seed: u64,
    with_truth: bool,
) -> Result<ResampleStudy> {
    if estimands.is_empty() || resamples == 0 {
        return Err(Error::Empty("estimands or resamples"));
    }
    let noise = draw_noise(process, len, derive_seed(seed, 0))?;
    let path_seed = derive_seed(seed, 1);
    let rows: Vec<Vec<(f64, f64, f64)>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(derive_seed(path_seed, r as u64));
            let sim = simulate_given_noise(process, mechanism, noise.clone(), &mut rng)?;
            let view = PathView::new(&sim.outcomes, &sim.treatments, &sim.p1, mechanism)?;
            estimands
                .iter()
                .map(|spec| {
                    let c = contributions(&view, spec)?;
                    let n = c.tau.len() as f64;
                    let tau_bar = c.tau.iter().sum::<f64>() / n;
                    let gamma = c.sigma2.iter().sum::<f64>() / (n * n);
                    let truth = if with_truth && has_truth(spec) {
                        mean(&true_step_effect(process, &noise, &sim.treatments, spec.p, spec.q)?)
                    } else {
                        f64::NAN
                    };
                    Ok((tau_bar, gamma, truth))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let draws = estimands
        .iter()
        .enumerate()
        .map(|(k, spec)| EstimatorDraws {
            label: estimand_label(spec),
            tau_bar_hat: rows.iter().map(|r| r[k].0).collect(),
            gamma_hat: rows.iter().map(|r| r[k].1).collect(),
            truth: rows.iter().map(|r| r[k].2).collect(),
        })
        .collect();
    Ok(ResampleStudy { noise, draws })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CltRow {
    pub len: usize,
    pub noise_draw: usize,
    pub qq_correlation: f64,
}

#[derive(Debug, Clone)]
pub struct CltShape {
    pub rows: Vec<CltRow>,
    /// Resampled means for the first noise draw at each length.
    pub first_draws: Vec<(usize, Vec<f64>)>,
}

/// Q-Q normal correlation of the resampled contemporaneous mean for each
/// series length and each of `noise_draws` fixed potential-outcome draws.
/// Draw `k` at length index `l` uses seed `derive_seed(derive_seed(seed, l), k)`.
pub fn clt_shape(
    process: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    lens: &[usize],
    resamples: usize,
    noise_draws: usize,
    seed: u64,
) -> Result<CltShape> {
    let spec = [EstimandSpec::lag(0)];
    let mut rows = Vec::with_capacity(lens.len() * noise_draws);
    let mut first_draws = Vec::with_capacity(lens.len());
    for (li, &len) in lens.iter().enumerate() {
        let len_seed = derive_seed(seed, li as u64);
        for k in 0..noise_draws {
            let s = resample_fixed_potential(process, mechanism, &spec, len, resamples, derive_seed(len_seed, k as u64), false)?;
            let draws = &s.draws[0].tau_bar_hat;
            rows.push(CltRow {
                len,
                noise_draw: k,
                qq_correlation: qq_normal_correlation(draws),
            });
            if k == 0 {
                first_draws.push((len, draws.clone()));
            }
        }
    }
    Ok(CltShape { rows, first_draws })
}

/// Mean Q-Q correlation per length, in the order of first appearance.
pub fn mean_qq_by_len(rows: &[CltRow]) -> Vec<(usize, f64)> {
    let mut lens: Vec<usize> = Vec::new();
    for r in rows {
        if !lens.contains(&r.len) {
            lens.push(r.len);
        }
    }
    lens.into_iter()
        .map(|len| {
            let v: Vec<f64> = rows.iter().filter(|r| r.len == len).map(|r| r.qq_correlation).collect();
            (len, mean(&v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub replication: usize,
    pub exact_p: f64,
    /// `NaN` when the bound is zero everywhere.
    pub conservative_p: f64,
}

/// Exact and conservative p-values over independent simulated datasets.
#[allow(clippy::too_many_arguments)]
pub fn calibration(
    process: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    len: usize,
    replicates: usize,
    outer: usize,
    tie_rule: TieRule,
    seed: u64,
) -> Result<Vec<CalibrationRow>> {
    (0..outer)
        .into_par_iter()
        .map(|r| {
            let (exact_p, clt) =
                simulate_and_test(process, mechanism, spec, len, replicates, tie_rule, derive_seed(seed, r as u64))?;
            Ok(CalibrationRow {
                replication: r,
                exact_p,
                conservative_p: clt.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Fraction of p-values at or below `alpha` (NaN counts as no rejection).
pub fn rejection_rate(p: &[f64], alpha: f64) -> f64 {
    p.iter().filter(|&&v| v <= alpha).count() as f64 / p.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PooledRow {
    pub resample: usize,
    pub unit_a: f64,
    pub unit_b: f64,
    pub pooled: f64,
}

/// Two units with their own fixed potential outcomes (noise streams 0 and 1
/// of `seed`); each resample draws independent paths for both and records
/// the unit estimates and the pooled estimate.
pub fn pooled_two_unit(
    process: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    spec: &EstimandSpec,
    len: usize,
    resamples: usize,
    seed: u64,
) -> Result<Vec<PooledRow>> {
    let noise_a = draw_noise(process, len, derive_seed(seed, 0))?;
    let noise_b = draw_noise(process, len, derive_seed(seed, 1))?;
    let path_seed = derive_seed(seed, 2);
    (0..resamples)
        .into_par_iter()
        .map(|r| {
            let rs = derive_seed(path_seed, r as u64);
            let unit = |id: &str, noise: &NoisePath, stream: u64| -> Result<UnitExperiment> {
                let mut rng = stream_rng(derive_seed(rs, stream));
                let Simulated { outcomes, treatments, p1, .. } =
                    simulate_given_noise(process, mechanism, noise.clone(), &mut rng)?;
                Ok(UnitExperiment::from_parts(
                    id,
                    (1..=len as i64).collect(),
                    outcomes,
                    TreatmentPath::new(treatments)?,
                    mechanism.clone(),
                    Some(p1),
                ))
            };
            let a = unit("a", &noise_a, 0)?;
            let b = unit("b", &noise_b, 1)?;
            let est = |u: &UnitExperiment| crate::estimators::estimate(u, spec).map(|e| e.tau_bar_hat);
            Ok(PooledRow {
                resample: r,
                unit_a: est(&a)?,
                unit_b: est(&b)?,
                pooled: pooled_estimate(&[&a, &b], spec)?,
            })
        })
        .collect()
}

/// All per-t standardized statistics `v_{t,p}` over resampled paths with
/// the outcomes held fixed (the sharp null).
pub fn standardized_null_draws(
    y_obs: &[f64],
    mechanism: &AssignmentMechanism,
    p: usize,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(derive_seed(seed, r as u64));
            let (mut w, mut p1) = (Vec::new(), Vec::new());
            sample_into(mechanism, y_obs, y_obs.len(), &mut rng, &mut w, &mut p1)?;
            standardized_series(&PathView::new(y_obs, &w, &p1, mechanism)?, p)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summary_statistics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert_relative_eq!(variance(&x), 5.0 / 3.0);
        assert_eq!(ks_uniform(&[0.5]), 0.5);
        assert_relative_eq!(ks_uniform(&[0.125, 0.375, 0.625, 0.875]), 0.125);
    }

    #[test]
    fn qq_correlation_of_normal_quantiles_is_one() {
        let n = Normal::standard();
        let x: Vec<f64> = (1..=200).map(|i| n.inverse_cdf((i as f64 - 0.375) / 200.25)).collect();
        assert_relative_eq!(qq_normal_correlation(&x), 1.0, epsilon = 1e-12);
        let skewed: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!(qq_normal_correlation(&skewed) < 0.95);
    }

    #[test]
    fn resampling_is_reproducible() {
        let process = PotentialProcessSpec::ar1(0.0, 0.5, 0.5, 1.0);
        let m = AssignmentMechanism::bernoulli(0.5).unwrap();
        let specs = [EstimandSpec::lag(0), EstimandSpec::lag(1)];
        let a = resample_fixed_potential(&process, &m, &specs, 30, 50, 4, true).unwrap();
        let b = resample_fixed_potential(&process, &m, &specs, 30, 50, 4, true).unwrap();
        assert_eq!(a.draws[1].tau_bar_hat, b.draws[1].tau_bar_hat);
        assert_eq!(a.draws[0].label, "p=0");
        // Equal scales: the true contemporaneous effect is mu1 - mu0 on every path.
        assert!(a.draws[0].truth.iter().all(|&t| (t - 0.5).abs() < 1e-12));
    }
}
