//! The simulation study behind `tsexp replicate`.

use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;

use tsexp_core::inference::{power_curve, PowerConfig, PowerPoint, PowerRow};
use tsexp_core::process::NoiseKind;
use tsexp_core::rng::derive_seed;
use tsexp_core::study::{
    calibration, clt_shape, ks_uniform, mean, mean_qq_by_len, pooled_two_unit, rejection_rate, resample_fixed_potential,
    variance, CltRow,
};
use tsexp_core::{AssignmentMechanism, EstimandSpec, PotentialProcessSpec};

use crate::args::{ReplicateArgs, StudyPart};
use crate::commands::{check_alpha, require_seed, tie_rule};
use crate::output::{write_csv, write_json};

const MU1: f64 = 0.5;
const PHI: f64 = 0.5;
const SIGMA: f64 = 1.0;
const TAU_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
const PHI_GRID: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];
const PHI_STUDY_MU1: f64 = 0.25;

#[derive(Serialize)]
struct DrawRow<'a> {
    study: &'a str,
    len: usize,
    resample: usize,
    tau_bar_hat: f64,
}

#[derive(Serialize)]
struct QqRow {
    noise: &'static str,
    len: usize,
    noise_draw: usize,
    qq_correlation: f64,
}

#[derive(Serialize)]
struct EstimatorRow<'a> {
    estimator: &'a str,
    resample: usize,
    tau_bar_hat: f64,
    gamma_hat: f64,
    truth: f64,
}

#[derive(Serialize)]
struct EstimatorSummary {
    estimator: String,
    mean_tau_bar_hat: f64,
    mean_truth: f64,
    variance_tau_bar_hat: f64,
    mean_gamma_hat: f64,
}

#[derive(Serialize, Default)]
struct Summary {
    seed: u64,
    #[serde(rename = "T")]
    len: usize,
    outer: usize,
    replicates: usize,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaussian_qq_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    cauchy_mean_qq_correlation: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_exact_rejection: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_conservative_rejection: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_exact_ks: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    power_tau: Vec<PowerRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    power_phi: Vec<PowerRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    estimators: Vec<EstimatorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_variances: Option<[f64; 3]>,
}

fn ar(mu1: f64, phi: f64) -> PotentialProcessSpec {
    PotentialProcessSpec::ar1(0.0, mu1, phi, SIGMA)
}

pub fn run(a: &ReplicateArgs, out: &Path) -> Result<()> {
    let seed = require_seed(a.seed, "replicate")?;
    check_alpha(a.alpha)?;
    if a.outer < 2 || a.replicates == 0 || a.len < 4 {
        bail!("need --outer >= 2, --M >= 1 and --T >= 4");
    }
    let wants = |p: StudyPart| a.only.is_empty() || a.only.contains(&p);
    let mechanism = AssignmentMechanism::bernoulli(0.5)?;
    let lag0 = EstimandSpec::lag(0);
    let mut summary = Summary {
        seed,
        len: a.len,
        outer: a.outer,
        replicates: a.replicates,
        alpha: a.alpha,
        ..Summary::default()
    };

    if wants(StudyPart::Clt) {
        let part = derive_seed(seed, 0);
        let gauss = resample_fixed_potential(&ar(MU1, PHI), &mechanism, std::slice::from_ref(&lag0), a.len, a.outer, derive_seed(part, 0), false)?;
        let gdraws = &gauss.draws[0].tau_bar_hat;
        let gauss_qq = tsexp_core::study::qq_normal_correlation(gdraws);
        summary.gaussian_qq_correlation = Some(gauss_qq);
        let cauchy = clt_shape(
            &ar(MU1, PHI).with_noise(NoiseKind::Cauchy),
            &mechanism,
            &a.cauchy_lens,
            a.outer,
            a.noise_draws,
            derive_seed(part, 1),
        )?;
        summary.cauchy_mean_qq_correlation = mean_qq_by_len(&cauchy.rows);

        let mut rows: Vec<DrawRow> = gdraws
            .iter()
            .enumerate()
            .map(|(resample, &v)| DrawRow { study: "gaussian", len: a.len, resample, tau_bar_hat: v })
            .collect();
        for (len, draws) in &cauchy.first_draws {
            rows.extend(draws.iter().enumerate().map(|(resample, &v)| DrawRow {
                study: "cauchy",
                len: *len,
                resample,
                tau_bar_hat: v,
            }));
        }
        write_csv(out, "clt_draws.csv", &rows)?;
        let mut qq = vec![QqRow { noise: "gaussian", len: a.len, noise_draw: 0, qq_correlation: gauss_qq }];
        qq.extend(cauchy.rows.iter().map(|&CltRow { len, noise_draw, qq_correlation }| QqRow {
            noise: "cauchy",
            len,
            noise_draw,
            qq_correlation,
        }));
        write_csv(out, "clt_qq.csv", &qq)?;
    }

    if wants(StudyPart::Null) {
        let rows = calibration(
            &ar(0.0, PHI),
            &mechanism,
            &lag0,
            a.len,
            a.replicates,
            a.outer,
            tie_rule(a.tie_rule),
            derive_seed(seed, 1),
        )?;
        let exact: Vec<f64> = rows.iter().map(|r| r.exact_p).collect();
        let clt: Vec<f64> = rows.iter().map(|r| r.conservative_p).collect();
        summary.null_exact_rejection = Some(rejection_rate(&exact, a.alpha));
        summary.null_conservative_rejection = Some(rejection_rate(&clt, a.alpha));
        summary.null_exact_ks = Some(ks_uniform(&exact));
        write_csv(out, "null_pvalues.csv", &rows)?;
    }

    if wants(StudyPart::Power) {
        let config = |s| PowerConfig {
            len: a.len,
            replicates: a.replicates,
            outer: a.outer,
            alpha: a.alpha,
            tie_rule: tie_rule(a.tie_rule),
            seed: s,
        };
        let tau_grid: Vec<PowerPoint> =
            TAU_GRID.iter().map(|&mu1| PowerPoint { label: mu1, process: ar(mu1, PHI) }).collect();
        summary.power_tau = power_curve(&tau_grid, &mechanism, &lag0, config(derive_seed(seed, 2)))?;
        write_csv(out, "power_tau.csv", &summary.power_tau)?;
        let phi_grid: Vec<PowerPoint> =
            PHI_GRID.iter().map(|&phi| PowerPoint { label: phi, process: ar(PHI_STUDY_MU1, phi) }).collect();
        summary.power_phi = power_curve(&phi_grid, &mechanism, &lag0, config(derive_seed(seed, 3)))?;
        write_csv(out, "power_phi.csv", &summary.power_phi)?;
    }

    if wants(StudyPart::Estimators) {
        let specs = [EstimandSpec::lag(0), EstimandSpec::step(0, 1), EstimandSpec::lag(1), EstimandSpec::lag(2)];
        let study = resample_fixed_potential(&ar(MU1, PHI), &mechanism, &specs, a.len, a.outer, derive_seed(seed, 4), true)?;
        let mut rows = Vec::new();
        for d in &study.draws {
            rows.extend((0..d.tau_bar_hat.len()).map(|r| EstimatorRow {
                estimator: &d.label,
                resample: r,
                tau_bar_hat: d.tau_bar_hat[r],
                gamma_hat: d.gamma_hat[r],
                truth: d.truth[r],
            }));
            summary.estimators.push(EstimatorSummary {
                estimator: d.label.clone(),
                mean_tau_bar_hat: mean(&d.tau_bar_hat),
                mean_truth: mean(&d.truth),
                variance_tau_bar_hat: variance(&d.tau_bar_hat),
                mean_gamma_hat: mean(&d.gamma_hat),
            });
        }
        write_csv(out, "estimator_draws.csv", &rows)?;
    }

    if wants(StudyPart::Pooled) {
        let rows = pooled_two_unit(&ar(MU1, PHI), &mechanism, &lag0, a.len, a.outer, derive_seed(seed, 5))?;
        let col = |f: fn(&tsexp_core::study::PooledRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        summary.pooled_variances = Some([
            variance(&col(|r| r.unit_a)),
            variance(&col(|r| r.unit_b)),
            variance(&col(|r| r.pooled)),
        ]);
        write_csv(out, "pooled_draws.csv", &rows)?;
    }

    let path = write_json(out, "summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("wrote study files to {}", path.parent().unwrap_or(out).display());
    Ok(())
}
