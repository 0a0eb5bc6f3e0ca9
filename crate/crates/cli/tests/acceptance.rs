//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Study seeds follow `tsexp replicate --seed 1`, so the numbers printed here
//! match that command's summary where the designs coincide.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use tsexp_core::estimators::EstimandSpec;
use tsexp_core::inference::{power_curve, PowerConfig, PowerPoint};
use tsexp_core::mechanism::sample_path;
use tsexp_core::pooling::fisher_combine;
use tsexp_core::process::{
    closed_form_lag_effect, draw_noise, lag_effect_by_enumeration, simulate, CoupledProcess, NoiseKind,
    PotentialProcessSpec,
};
use tsexp_core::rng::{derive_seed, stream_rng};
use tsexp_core::slippage::{compute_slippage, parse_timestamp, ExecMethod, OrderRecord, Side, Trade};
use tsexp_core::study::{
    calibration, clt_shape, ks_uniform, mean, mean_qq_by_len, pooled_two_unit, qq_normal_correlation,
    rejection_rate, resample_fixed_potential, standardized_null_draws, std_error, variance,
};
use tsexp_core::{AssignmentMechanism, TieRule};

const SEED: u64 = 1;
const LEN: usize = 100;
const OUTER: usize = 2000;
const REPLICATES: usize = 1000;
const ALPHA: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ar(mu1: f64, phi: f64) -> PotentialProcessSpec {
    PotentialProcessSpec::ar1(0.0, mu1, phi, 1.0)
}

fn half() -> AssignmentMechanism {
    AssignmentMechanism::bernoulli(0.5).unwrap()
}

fn unbiasedness() -> Outcome {
    let specs = [EstimandSpec::lag(0), EstimandSpec::lag(1), EstimandSpec::lag(2)];
    let study = resample_fixed_potential(&ar(0.5, 0.5), &half(), &specs, LEN, 50_000, derive_seed(SEED, 100), true).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in &study.draws {
        let diff: Vec<f64> = d.tau_bar_hat.iter().zip(&d.truth).map(|(a, b)| a - b).collect();
        let gap = mean(&diff).abs();
        let se = std_error(&diff);
        pass &= gap <= 3.0 * se;
        parts.push(format!("{}: |diff|={gap:.5} 3SE={:.5}", d.label, 3.0 * se));
    }
    outcome(pass, parts.join("; "))
}

fn closed_form() -> Outcome {
    let spec = ar(0.5, 0.5);
    let noise = draw_noise(&spec, LEN, derive_seed(SEED, 101)).unwrap();
    let w = sample_path(&half(), &[], LEN, derive_seed(SEED, 102)).unwrap().path.into_inner();
    let mut worst: f64 = 0.0;
    for p in 0..=3 {
        let closed = closed_form_lag_effect(&spec, &noise, LEN, p);
        let brute = lag_effect_by_enumeration(&CoupledProcess { spec: &spec, noise: &noise }, &w, p).unwrap();
        worst = closed.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    let quarter = closed_form_lag_effect(&spec, &noise, LEN, 1).iter().all(|&v| v == 0.25);

    let mut rng = stream_rng(derive_seed(SEED, 103));
    for k in 0..100 {
        let mut s = PotentialProcessSpec::ar1(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.95..0.95),
            rng.random_range(0.2..2.0),
        );
        s.sigma1 = rng.random_range(0.2..2.0);
        let noise = draw_noise(&s, 30, derive_seed(SEED, 200 + k)).unwrap();
        let w: Vec<u8> = (0..30).map(|_| u8::from(rng.random_bool(0.5))).collect();
        for p in 0..=3 {
            let closed = closed_form_lag_effect(&s, &noise, 30, p);
            let brute = lag_effect_by_enumeration(&CoupledProcess { spec: &s, noise: &noise }, &w, p).unwrap();
            worst = closed.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    outcome(
        worst <= 1e-10 && quarter,
        format!("max |closed - enumerated| = {worst:.2e} over 101 configurations, p <= 3; lag-1 effect constant 0.25: {quarter}"),
    )
}

struct NullRates {
    exact: f64,
    ks: f64,
    conservative: f64,
    secs: f64,
}

fn null_study() -> NullRates {
    let start = Instant::now();
    let rows = calibration(
        &ar(0.0, 0.5),
        &half(),
        &EstimandSpec::lag(0),
        LEN,
        REPLICATES,
        OUTER,
        TieRule::Strict,
        derive_seed(SEED, 1),
    )
    .unwrap();
    let exact: Vec<f64> = rows.iter().map(|r| r.exact_p).collect();
    let clt: Vec<f64> = rows.iter().map(|r| r.conservative_p).collect();
    NullRates {
        exact: rejection_rate(&exact, ALPHA),
        ks: ks_uniform(&exact),
        conservative: rejection_rate(&clt, ALPHA),
        secs: start.elapsed().as_secs_f64(),
    }
}

fn exact_calibration(n: &NullRates) -> Outcome {
    outcome(
        (0.035..=0.065).contains(&n.exact) && n.ks <= 0.03,
        format!("rejection {:.4} in [0.035, 0.065], KS {:.4} <= 0.03 ({:.0}s)", n.exact, n.ks, n.secs),
    )
}

fn conservative_calibration(n: &NullRates) -> Outcome {
    outcome(
        n.conservative > 0.0 && n.conservative <= 0.06,
        format!("rejection {:.4} in (0, 0.06]", n.conservative),
    )
}

fn bound_dominance() -> Outcome {
    let specs = [EstimandSpec::lag(0), EstimandSpec::lag(1), EstimandSpec::lag(2)];
    let study = resample_fixed_potential(&ar(0.5, 0.5), &half(), &specs, LEN, 5000, derive_seed(SEED, 104), false).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in &study.draws {
        let v = variance(&d.tau_bar_hat);
        let g = mean(&d.gamma_hat);
        pass &= v < g;
        parts.push(format!("{}: var {v:.4} < mean bound {g:.4}", d.label));
    }
    outcome(pass, parts.join("; "))
}

fn clt_shape_check() -> Outcome {
    let part = derive_seed(SEED, 0);
    let gauss = resample_fixed_potential(&ar(0.5, 0.5), &half(), &[EstimandSpec::lag(0)], LEN, OUTER, derive_seed(part, 0), false)
        .unwrap();
    let qq = qq_normal_correlation(&gauss.draws[0].tau_bar_hat);
    let cauchy = clt_shape(
        &ar(0.5, 0.5).with_noise(NoiseKind::Cauchy),
        &half(),
        &[100, 1000, 10_000],
        OUTER,
        20,
        derive_seed(part, 1),
    )
    .unwrap();
    let by_len = mean_qq_by_len(&cauchy.rows);
    let monotone = by_len.windows(2).all(|w| w[1].1 > w[0].1);
    let cauchy_text: Vec<String> = by_len.iter().map(|(n, r)| format!("T={n}: {r:.4}")).collect();
    outcome(
        qq >= 0.995 && monotone,
        format!("gaussian Q-Q {qq:.5} >= 0.995; cauchy mean Q-Q {} (increasing: {monotone})", cauchy_text.join(", ")),
    )
}

fn power_monotonicity() -> Outcome {
    let grid: Vec<PowerPoint> = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        .iter()
        .map(|&mu1| PowerPoint { label: mu1, process: ar(mu1, 0.5) })
        .collect();
    let config = PowerConfig {
        len: LEN,
        replicates: REPLICATES,
        outer: OUTER,
        alpha: ALPHA,
        tie_rule: TieRule::Strict,
        seed: derive_seed(SEED, 2),
    };
    let rows = power_curve(&grid, &half(), &EstimandSpec::lag(0), config).unwrap();
    let mut pass = true;
    for w in rows.windows(2) {
        let se = w[0].exact_se.hypot(w[1].exact_se);
        pass &= w[1].exact_rejection >= w[0].exact_rejection - 2.0 * se;
    }
    for r in &rows {
        pass &= r.conservative_rejection <= r.exact_rejection + 2.0 * r.exact_se.hypot(r.conservative_se);
    }
    let text: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.1}: {:.3}/{:.3}", r.label, r.exact_rejection, r.conservative_rejection))
        .collect();
    outcome(pass, format!("mu1: exact/conservative {}", text.join(", ")))
}

fn pooling() -> Outcome {
    let rows = pooled_two_unit(&ar(0.5, 0.5), &half(), &EstimandSpec::lag(0), LEN, OUTER, derive_seed(SEED, 5)).unwrap();
    let col = |f: fn(&tsexp_core::study::PooledRow) -> f64| variance(&rows.iter().map(f).collect::<Vec<_>>());
    let (va, vb, vp) = (col(|r| r.unit_a), col(|r| r.unit_b), col(|r| r.pooled));

    let draws = 20_000;
    let x2: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(derive_seed(derive_seed(SEED, 105), k as u64));
            let p: Vec<f64> = (0..10).map(|_| 1.0 - rng.random::<f64>()).collect();
            fisher_combine(&p, None).unwrap().statistic
        })
        .collect();
    let (m, se) = (mean(&x2), std_error(&x2));
    outcome(
        vp < va && vp < vb && (m - 20.0).abs() <= 3.0 * se,
        format!("variances unit a {va:.4}, unit b {vb:.4}, pooled {vp:.4}; Fisher mean {m:.3} vs 20 (3SE {:.3})", 3.0 * se),
    )
}

fn standardized() -> Outcome {
    let sim = simulate(&ar(0.5, 0.5), &half(), LEN, derive_seed(SEED, 106)).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for pi in [0.5, 0.3] {
        let mech = AssignmentMechanism::bernoulli(pi).unwrap();
        let v = standardized_null_draws(&sim.outcomes, &mech, 0, 5000, derive_seed(SEED, 107)).unwrap();
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let (m, m_se) = (mean(&v), std_error(&v));
        let (var, var_se) = (mean(&sq), std_error(&sq));
        pass &= m.abs() <= 3.0 * m_se && (var - 1.0).abs() <= 3.0 * var_se;
        parts.push(format!("pi={pi}: mean {m:.5} (3SE {:.5}), variance {var:.5} (3SE {:.5})", 3.0 * m_se, 3.0 * var_se));
    }
    outcome(pass, parts.join("; "))
}

fn slippage() -> Outcome {
    let t0 = parse_timestamp("2016-07-12T09:00:00").unwrap();
    let order = |side, mid, fills: &[(f64, f64)]| OrderRecord {
        order_id: "o".into(),
        randomization_time: t0,
        side,
        mid_price: mid,
        method: ExecMethod::B,
        trades: fills.iter().map(|&(price, volume_fraction)| Trade { time: t0, price, volume_fraction }).collect(),
    };
    let hand = [
        compute_slippage(&order(Side::Buy, 100.0, &[(100.5, 1.0)])).unwrap() == -50.0,
        compute_slippage(&order(Side::Sell, 100.0, &[(100.2, 0.5), (99.8, 0.5)])).unwrap() == 0.0,
        compute_slippage(&order(Side::Sell, 200.0, &[(201.0, 1.0)])).unwrap() == 50.0,
    ];

    let mut rng = stream_rng(derive_seed(SEED, 108));
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..6);
        let mid = rng.random_range(10.0..500.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let fills: Vec<(f64, f64)> = raw.iter().map(|v| (mid * rng.random_range(0.98..1.02), v / total)).collect();
        let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<(f64, f64)> = fills.iter().map(|&(p, v)| (p * c, v)).collect();
        let a = compute_slippage(&order(side, mid, &fills)).unwrap();
        let b = compute_slippage(&order(side, mid * c, &scaled)).unwrap();
        worst = worst.max((a - b).abs());
    }
    outcome(
        hand.iter().all(|&h| h) && worst <= 1e-9,
        format!("hand examples exact: {hand:?}; max scale discrepancy {worst:.2e} bps over 1000 orders"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_tsexp")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "tsexp {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.json"), r#"{"family":"ar1","mu0":0,"mu1":0.2,"phi":0.5,"sigma0":1,"sigma1":1,"noise":"gaussian"}"#).unwrap();
    let mut files: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for threads in ["1", "2", "4"] {
        let out = format!("run{threads}");
        let o = out.as_str();
        let mut stdout = String::new();
        run_cli(d, &["--threads", threads, "simulate", "--spec", "spec.json", "--T", "100", "--seed", "5", "--output-dir", o]);
        let exp = format!("{o}/experiment.csv");
        let panel_src = fs::read_to_string(d.join(&exp)).unwrap();
        let mut panel = String::from("unit_id,t,ts,y,w,p1\n");
        for (u, shift) in [("a", 0usize), ("b", 50)] {
            for line in panel_src.lines().skip(1 + shift).take(50) {
                panel.push_str(&format!("{u},{line}\n"));
            }
        }
        fs::write(d.join(format!("{o}/panel.csv")), panel).unwrap();
        stdout += &run_cli(d, &["--threads", threads, "estimate", "--input", &exp, "--p", "0,1,2", "--output-dir", o]);
        stdout += &run_cli(
            d,
            &["--threads", threads, "test", "--input", &exp, "--p", "0,1", "--M", "2000", "--seed", "11", "--keep-draws", "--output-dir", o],
        );
        stdout += &run_cli(
            d,
            &["--threads", threads, "pool", "--input", &format!("{o}/panel.csv"), "--independent-units", "--M", "500", "--seed", "12", "--output-dir", o],
        );
        stdout += &run_cli(
            d,
            &[
                "--threads", threads, "replicate", "--seed", "13", "--outer", "40", "--M", "50", "--T", "40", "--cauchy-lens", "40,80",
                "--noise-draws", "2", "--output-dir", &format!("{o}/rep"),
            ],
        );
        let mut run = vec![("stdout".to_string(), stdout.replace(&out, "run").into_bytes())];
        for name in [
            "experiment.csv", "truth.json", "estimate.json", "test.json", "null_draws_p0_q0.csv", "null_draws_p1_q0.csv", "pool.json",
            "rep/summary.json", "rep/null_pvalues.csv", "rep/power_tau.csv", "rep/clt_draws.csv", "rep/estimator_draws.csv",
            "rep/pooled_draws.csv",
        ] {
            run.push((name.to_string(), fs::read(d.join(o).join(name)).unwrap()));
        }
        files.push(run);
    }
    let differing: Vec<&str> = files[0]
        .iter()
        .enumerate()
        .filter(|(k, (_, bytes))| files[1..].iter().any(|r| &r[*k].1 != bytes))
        .map(|(_, (name, _))| name.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        format!("simulate/estimate/test/pool/replicate under --threads 1, 2, 4: {} outputs compared, differing {differing:?}", files[0].len()),
    )
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "unbiasedness", &unbiasedness);
    report(2, "closed-form estimand", &closed_form);
    let null = null_study();
    report(3, "exact-test calibration", &|| exact_calibration(&null));
    report(4, "conservative-test calibration", &|| conservative_calibration(&null));
    report(5, "variance-bound dominance", &bound_dominance);
    report(6, "normal shape", &clt_shape_check);
    report(7, "power monotonicity", &power_monotonicity);
    report(8, "pooling", &pooling);
    report(9, "standardized statistic", &standardized);
    report(10, "slippage", &slippage);
    report(11, "determinism across threads", &determinism);
    println!("{} of 11 criteria passed in {:.0}s", 11 - failed, total.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
