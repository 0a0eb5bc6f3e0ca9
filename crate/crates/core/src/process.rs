//! Coupled potential-outcome processes.
//!
//! All counterfactual paths share one noise realization, so `Y_t(w)` can be
//! evaluated lazily along any requested treatment path without building the
//! full tree of `2(2^T - 1)` potential outcomes.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::AssignmentMechanism;
use crate::rng::{derive_seed, stream_rng, StreamRng};

/// Largest `p + q` accepted by the enumeration routines.
pub const MAX_ENUMERATION_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ar1,
    Ma1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "gaussian-standard", alias = "gaussian")]
    Gaussian,
    #[serde(rename = "cauchy-standard", alias = "cauchy")]
    Cauchy,
}

/// Parameters of a potential AR(1) or MA(1) with arm-specific drift and scale.
///
/// AR(1): `Y_t(w) = mu_{w_t} + phi * Y_{t-1}(w) + sigma_{w_t} * eps_t`, with
/// `Y_0 = y0`.
///
/// MA(1): `Y_t(w) = mu_{w_t} + sigma_{w_t} * eps_t + theta * sigma_{w_{t-1}} * eps_{t-1}`,
/// and with `impulse` set the lagged drift `theta * mu_{w_{t-1}}` is added as
/// well, so that the outcome depends on `w_{t-1:t}` only. For AR(1) the
/// impulse form coincides with the plain one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialProcessSpec {
    pub family: Family,
    pub mu0: f64,
    pub mu1: f64,
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub theta: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub noise: NoiseKind,
    #[serde(default)]
    pub y0: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub impulse: bool,
}

impl PotentialProcessSpec {
    /// Potential AR(1) with Gaussian noise and a common scale.
    pub fn ar1(mu0: f64, mu1: f64, phi: f64, sigma: f64) -> Self {
        Self {
            family: Family::Ar1,
            mu0,
            mu1,
            phi,
            theta: 0.0,
            sigma0: sigma,
            sigma1: sigma,
            noise: NoiseKind::Gaussian,
            y0: 0.0,
            impulse: false,
        }
    }

    pub fn ma1(mu0: f64, mu1: f64, theta: f64, sigma: f64) -> Self {
        Self {
            family: Family::Ma1,
            theta,
            phi: 0.0,
            ..Self::ar1(mu0, mu1, 0.0, sigma)
        }
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.check_structure()?;
        Ok(spec)
    }

    /// Finite parameters and non-negative scales. Zero scales are accepted
    /// here so that deterministic paths can be evaluated.
    pub fn check_structure(&self) -> Result<()> {
        let all = [
            self.mu0, self.mu1, self.phi, self.theta, self.sigma0, self.sigma1, self.y0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("process parameters must be finite".into()));
        }
        if self.sigma0 < 0.0 || self.sigma1 < 0.0 {
            return Err(Error::InvalidArgument("sigma0 and sigma1 must be non-negative".into()));
        }
        Ok(())
    }

    /// Strict check used before any inference: both scales must be positive
    /// so that the outcomes are stochastic.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        if self.sigma0 <= 0.0 || self.sigma1 <= 0.0 {
            return Err(Error::InvalidArgument(
                "sigma0 and sigma1 must be strictly positive for simulation and testing".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn mu(&self, arm: u8) -> f64 {
        if arm == 1 {
            self.mu1
        } else {
            self.mu0
        }
    }

    #[inline]
    pub fn sigma(&self, arm: u8) -> f64 {
        if arm == 1 {
            self.sigma1
        } else {
            self.sigma0
        }
    }

    /// True when the lagged effect has the closed form
    /// `phi^p {(mu1 - mu0) + (sigma1 - sigma0) eps_{t-p}}`.
    pub fn has_closed_form_lag_effect(&self) -> bool {
        self.family == Family::Ar1
    }

    pub fn stepper(&self) -> Stepper<'_> {
        Stepper {
            spec: self,
            y_prev: self.y0,
            eps_prev: 0.0,
            w_prev: None,
        }
    }
}

/// Advances one process one period at a time. Used when treatment
/// assignment has to be interleaved with outcome generation.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    spec: &'a PotentialProcessSpec,
    y_prev: f64,
    eps_prev: f64,
    w_prev: Option<u8>,
}

impl Stepper<'_> {
    pub fn step(&mut self, arm: u8, eps: f64) -> f64 {
        let s = self.spec;
        let y = match s.family {
            Family::Ar1 => s.mu(arm) + s.phi * self.y_prev + s.sigma(arm) * eps,
            Family::Ma1 => {
                let lagged = match self.w_prev {
                    Some(prev) => {
                        let drift = if s.impulse { s.theta * s.mu(prev) } else { 0.0 };
                        drift + s.theta * s.sigma(prev) * self.eps_prev
                    }
                    None => 0.0,
                };
                s.mu(arm) + s.sigma(arm) * eps + lagged
            }
        };
        self.y_prev = y;
        self.eps_prev = eps;
        self.w_prev = Some(arm);
        y
    }
}

/// Treatment-invariant noise `eps_{1:T}` shared by all counterfactual paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub epsilon: Vec<f64>,
    pub seed: u64,
}

impl NoisePath {
    pub fn len(&self) -> usize {
        self.epsilon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilon.is_empty()
    }
}

pub fn draw_noise(spec: &PotentialProcessSpec, len: usize, seed: u64) -> Result<NoisePath> {
    if len == 0 {
        return Err(Error::Empty("noise path"));
    }
    let mut rng = stream_rng(seed);
    let epsilon = match spec.noise {
        NoiseKind::Gaussian => (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::Cauchy => {
            let c = Cauchy::new(0.0, 1.0).expect("unit scale is valid");
            (0..len).map(|_| c.sample(&mut rng)).collect()
        }
    };
    Ok(NoisePath { epsilon, seed })
}

/// `Y_{1:n}(w)` for `n = w.len()`, using the shared noise.
pub fn evaluate_path(spec: &PotentialProcessSpec, noise: &NoisePath, w: &[u8]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(w.len());
    evaluate_into(spec, noise, w, &mut out)?;
    Ok(out)
}

/// Buffer-reusing form of [`evaluate_path`].
pub fn evaluate_into(
    spec: &PotentialProcessSpec,
    noise: &NoisePath,
    w: &[u8],
    out: &mut Vec<f64>,
) -> Result<()> {
    if noise.len() < w.len() {
        return Err(Error::LengthMismatch {
            what: "noise shorter than treatment path",
            expected: w.len(),
            actual: noise.len(),
        });
    }
    spec.check_structure()?;
    out.clear();
    let mut stepper = spec.stepper();
    out.extend(w.iter().zip(&noise.epsilon).map(|(&arm, &eps)| stepper.step(arm, eps)));
    Ok(())
}

/// One simulated unit: the realized series plus the noise that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub outcomes: Vec<f64>,
    pub treatments: Vec<u8>,
    pub p1: Vec<f64>,
    pub noise: NoisePath,
}

/// Simulates `len` periods, drawing each `w_t` from the mechanism given the
/// outcomes realized so far. Noise uses stream 0 of `seed`, assignment
/// stream 1.
pub fn simulate(
    spec: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    len: usize,
    seed: u64,
) -> Result<Simulated> {
    let noise = draw_noise(spec, len, derive_seed(seed, 0))?;
    simulate_given_noise(spec, mechanism, noise, &mut stream_rng(derive_seed(seed, 1)))
}

/// Realizes one treatment path against fixed potential outcomes (the given
/// noise), drawing `w_t` from the mechanism as the series unfolds.
pub fn simulate_given_noise(
    spec: &PotentialProcessSpec,
    mechanism: &AssignmentMechanism,
    noise: NoisePath,
    rng: &mut StreamRng,
) -> Result<Simulated> {
    spec.check_structure()?;
    mechanism.check()?;
    let len = noise.len();
    let mut sim = Simulated {
        outcomes: Vec::with_capacity(len),
        treatments: Vec::with_capacity(len),
        p1: Vec::with_capacity(len),
        noise,
    };
    let history_free = mechanism.is_history_free();
    let mut stepper = spec.stepper();
    for t in 1..=len {
        let past_y = if history_free { &[][..] } else { &sim.outcomes[..] };
        let p = mechanism.prob_treat(t, &sim.treatments, past_y)?;
        let arm = u8::from(rng.random::<f64>() < p);
        sim.treatments.push(arm);
        sim.p1.push(p);
        sim.outcomes.push(stepper.step(arm, sim.noise.epsilon[t - 1]));
    }
    Ok(sim)
}

/// Anything that can report `Y_t(w_{1:t})` for the final period of a path.
pub trait PotentialOutcomes: Sync {
    /// Outcome at time `w.len()` along `w`.
    fn outcome_at_end(&self, w: &[u8]) -> Result<f64>;
}

/// A specification paired with its noise draw.
#[derive(Debug, Clone, Copy)]
pub struct CoupledProcess<'a> {
    pub spec: &'a PotentialProcessSpec,
    pub noise: &'a NoisePath,
}

impl PotentialOutcomes for CoupledProcess<'_> {
    fn outcome_at_end(&self, w: &[u8]) -> Result<f64> {
        let path = evaluate_path(self.spec, self.noise, w)?;
        path.last().copied().ok_or(Error::Empty("treatment path"))
    }
}

fn check_depth(p: usize, q: usize) -> Result<()> {
    if p + q > MAX_ENUMERATION_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "enumeration over 2^{} paths exceeds the cap of 2^{MAX_ENUMERATION_DEPTH}",
            p + q
        )));
    }
    Ok(())
}

fn push_bits(buf: &mut Vec<u8>, bits: usize, width: usize) {
    for k in (0..width).rev() {
        buf.push(((bits >> k) & 1) as u8);
    }
}

/// `tau^{(q)}_{t,p}` at a single (1-based) `t` by direct enumeration of the
/// uniformly weighted `2^{p+q}` paths. For `t <= p + q` only the `t - p - 1`
/// earlier assignments that exist are averaged over.
pub fn step_effect_at<P: PotentialOutcomes + ?Sized>(
    process: &P,
    w_obs: &[u8],
    t: usize,
    p: usize,
    q: usize,
) -> Result<f64> {
    check_depth(p, q)?;
    if t < p + 1 || t > w_obs.len() {
        return Err(Error::InvalidArgument(format!(
            "t={t} outside [{}, {}]",
            p + 1,
            w_obs.len()
        )));
    }
    let q = q.min(t - p - 1);
    let prefix = &w_obs[..t - p - q - 1];
    let mut buf = Vec::with_capacity(t);
    let mut total = 0.0;
    for dagger in 0..(1usize << q) {
        for tail in 0..(1usize << p) {
            let mut diff = 0.0;
            for (arm, sign) in [(1u8, 1.0), (0u8, -1.0)] {
                buf.clear();
                buf.extend_from_slice(prefix);
                push_bits(&mut buf, dagger, q);
                buf.push(arm);
                push_bits(&mut buf, tail, p);
                diff += sign * process.outcome_at_end(&buf)?;
            }
            total += diff;
        }
    }
    Ok(total / (1u64 << (p + q)) as f64)
}

/// `tau_{t,p}` for `t = p+1..=T` by enumeration (element `i` is `t = p+1+i`).
pub fn lag_effect_by_enumeration<P: PotentialOutcomes + ?Sized>(
    process: &P,
    w_obs: &[u8],
    p: usize,
) -> Result<Vec<f64>> {
    step_effect_by_enumeration(process, w_obs, p, 0)
}

/// `tau^{(q)}_{t,p}` for `t = p+1..=T` by enumeration.
pub fn step_effect_by_enumeration<P: PotentialOutcomes + ?Sized>(
    process: &P,
    w_obs: &[u8],
    p: usize,
    q: usize,
) -> Result<Vec<f64>> {
    if p >= w_obs.len() {
        return Err(Error::InvalidArgument(format!(
            "lag p={p} must be smaller than T={}",
            w_obs.len()
        )));
    }
    (p + 1..=w_obs.len())
        .map(|t| step_effect_at(process, w_obs, t, p, q))
        .collect()
}

/// Closed form `phi^p {(mu1 - mu0) + (sigma1 - sigma0) eps_{t-p}}` for `t = p+1..=len`.
pub fn closed_form_lag_effect(spec: &PotentialProcessSpec, noise: &NoisePath, len: usize, p: usize) -> Vec<f64> {
    let scale = spec.phi.powi(p as i32);
    let dmu = spec.mu1 - spec.mu0;
    let dsigma = spec.sigma1 - spec.sigma0;
    (p + 1..=len)
        .map(|t| scale * (dmu + dsigma * noise.epsilon[t - p - 1]))
        .collect()
}

/// True lag-`p` effect series along the observed path.
///
/// Uses the closed form where the process admits one and falls back to
/// enumeration otherwise. Element `i` corresponds to `t = p+1+i`.
pub fn true_lag_effect(
    spec: &PotentialProcessSpec,
    noise: &NoisePath,
    w_obs: &[u8],
    p: usize,
) -> Result<Vec<f64>> {
    let len = w_obs.len();
    if p >= len {
        return Err(Error::InvalidArgument(format!("lag p={p} must be smaller than T={len}")));
    }
    if noise.len() < len {
        return Err(Error::LengthMismatch {
            what: "noise shorter than treatment path",
            expected: len,
            actual: noise.len(),
        });
    }
    if spec.has_closed_form_lag_effect() {
        Ok(closed_form_lag_effect(spec, noise, len, p))
    } else {
        lag_effect_by_enumeration(&CoupledProcess { spec, noise }, w_obs, p)
    }
}

/// True `q`-step lag-`p` effect series by enumeration; `q = 0` reproduces
/// [`true_lag_effect`].
pub fn true_step_effect(
    spec: &PotentialProcessSpec,
    noise: &NoisePath,
    w_obs: &[u8],
    p: usize,
    q: usize,
) -> Result<Vec<f64>> {
    if q == 0 {
        return true_lag_effect(spec, noise, w_obs, p);
    }
    step_effect_by_enumeration(&CoupledProcess { spec, noise }, w_obs, p, q)
}

/// Temporal average of a per-t effect series.
pub fn temporal_average(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn noiseless(phi: f64, y0: f64) -> PotentialProcessSpec {
        PotentialProcessSpec {
            y0,
            ..PotentialProcessSpec::ar1(0.0, 0.0, phi, 0.0)
        }
    }

    #[test]
    fn gaussian_moments() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.0, 0.0, 1.0);
        let n = 1_000_000;
        let noise = draw_noise(&spec, n, 11).unwrap();
        let mean = noise.epsilon.iter().sum::<f64>() / n as f64;
        let var = noise.epsilon.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 / 1000.0, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn cauchy_median() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.0, 0.0, 1.0).with_noise(NoiseKind::Cauchy);
        let mut eps = draw_noise(&spec, 10_000, 5).unwrap().epsilon;
        eps.sort_by(f64::total_cmp);
        let median = 0.5 * (eps[4999] + eps[5000]);
        assert!(median.abs() < 3.0 * std::f64::consts::FRAC_PI_2 / 100.0, "median {median}");
    }

    #[test]
    fn noise_is_deterministic() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.0, 0.0, 1.0);
        assert_eq!(draw_noise(&spec, 50, 9).unwrap(), draw_noise(&spec, 50, 9).unwrap());
    }

    #[test]
    fn degenerate_recursion_is_additive() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.5, 0.0, 1.0);
        let noise = draw_noise(&spec, 20, 1).unwrap();
        let w: Vec<u8> = (0..20).map(|i| (i % 3 == 0) as u8).collect();
        let y = evaluate_path(&spec, &noise, &w).unwrap();
        for t in 0..20 {
            assert_eq!(y[t], 0.5 * f64::from(w[t]) + noise.epsilon[t]);
        }
    }

    #[test]
    fn noiseless_geometric_decay() {
        let spec = noiseless(0.5, 1.0);
        let noise = NoisePath { epsilon: vec![3.0; 10], seed: 0 };
        let y = evaluate_path(&spec, &noise, &[1, 0, 1, 1, 0, 0, 1, 0, 1, 0]).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert_eq!(*v, 0.5f64.powi(i as i32 + 1));
        }
    }

    #[test]
    fn short_noise_rejected() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.0, 0.5, 1.0);
        let noise = NoisePath { epsilon: vec![0.0; 3], seed: 0 };
        assert!(evaluate_path(&spec, &noise, &[0, 1, 0, 1]).is_err());
    }

    #[test]
    fn lag_effect_quarter_at_lag_one() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.5, 0.5, 1.0);
        let noise = draw_noise(&spec, 30, 4).unwrap();
        let w: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let closed = true_lag_effect(&spec, &noise, &w, 1).unwrap();
        let enumerated =
            lag_effect_by_enumeration(&CoupledProcess { spec: &spec, noise: &noise }, &w, 1).unwrap();
        for (c, e) in closed.iter().zip(&enumerated) {
            assert_eq!(*c, 0.25);
            assert_abs_diff_eq!(c, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn contemporaneous_effect_with_scale_change() {
        let spec = PotentialProcessSpec {
            sigma1: 2.0,
            sigma0: 1.0,
            ..PotentialProcessSpec::ar1(0.0, 0.5, 0.0, 1.0)
        };
        let noise = draw_noise(&spec, 15, 8).unwrap();
        let w = vec![1u8; 15];
        let tau = true_lag_effect(&spec, &noise, &w, 0).unwrap();
        for t in 0..15 {
            assert_abs_diff_eq!(tau[t], 0.5 + noise.epsilon[t], epsilon = 1e-15);
        }
    }

    #[test]
    fn lag_beyond_length_rejected() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.5, 0.5, 1.0);
        let noise = draw_noise(&spec, 5, 1).unwrap();
        assert!(true_lag_effect(&spec, &noise, &[0; 5], 5).is_err());
    }

    #[test]
    fn step_zero_equals_lag() {
        let spec = PotentialProcessSpec::ma1(0.0, 0.7, 0.4, 1.0);
        let noise = draw_noise(&spec, 12, 2).unwrap();
        let w = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1];
        assert_eq!(
            true_step_effect(&spec, &noise, &w, 1, 0).unwrap(),
            true_lag_effect(&spec, &noise, &w, 1).unwrap()
        );
    }

    #[test]
    fn step_effect_with_no_persistence() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.5, 0.0, 1.0);
        let noise = draw_noise(&spec, 10, 2).unwrap();
        let w = [1, 0, 0, 1, 1, 0, 1, 0, 1, 1];
        for v in true_step_effect(&spec, &noise, &w, 0, 1).unwrap() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_step_hand_enumeration() {
        // Length-3 path, p = 0, q = 1: average over w_2 of Y_3(w_1, w_2, 1) - Y_3(w_1, w_2, 0).
        let spec = PotentialProcessSpec {
            sigma1: 1.5,
            ..PotentialProcessSpec::ar1(0.2, 0.9, 0.5, 1.0)
        };
        let noise = NoisePath { epsilon: vec![0.3, -1.1, 0.7], seed: 0 };
        let w_obs = [1u8, 0, 1];
        let y3 = |w: [u8; 3]| {
            let mut y = 0.0;
            for t in 0..3 {
                y = spec.mu(w[t]) + 0.5 * y + spec.sigma(w[t]) * noise.epsilon[t];
            }
            y
        };
        let hand = 0.5 * ((y3([1, 1, 1]) - y3([1, 1, 0])) + (y3([1, 0, 1]) - y3([1, 0, 0])));
        let got = true_step_effect(&spec, &noise, &w_obs, 0, 1).unwrap();
        assert_abs_diff_eq!(got[2], hand, epsilon = 1e-14);
        // t = 1 has no earlier assignment: the q = 0 value.
        let lag = true_lag_effect(&spec, &noise, &w_obs, 0).unwrap();
        assert_abs_diff_eq!(got[0], lag[0], epsilon = 1e-14);
    }

    #[test]
    fn impulse_ma_depends_on_last_two_treatments_only() {
        let spec = PotentialProcessSpec {
            impulse: true,
            ..PotentialProcessSpec::ma1(0.1, 0.8, 0.6, 1.3)
        };
        let noise = draw_noise(&spec, 8, 3).unwrap();
        let base = [1u8, 0, 1, 1, 0, 1, 0, 1];
        let y = evaluate_path(&spec, &noise, &base).unwrap();
        for flip in 0..6 {
            let mut w = base;
            w[flip] ^= 1;
            let y2 = evaluate_path(&spec, &noise, &w).unwrap();
            assert_eq!(y[7], y2[7]);
        }
        let mut w = base;
        w[6] ^= 1;
        assert_ne!(y[7], evaluate_path(&spec, &noise, &w).unwrap()[7]);
    }

    #[test]
    fn spec_json_field_names() {
        let text = r#"{"family":"ar1","mu0":0.0,"mu1":0.5,"phi":0.5,"theta":0.0,
            "sigma0":1.0,"sigma1":1.0,"noise":"gaussian-standard","y0":0.0}"#;
        let spec = PotentialProcessSpec::from_json(text).unwrap();
        assert_eq!(spec, PotentialProcessSpec::ar1(0.0, 0.5, 0.5, 1.0));
        let back = serde_json::to_value(&spec).unwrap();
        for key in ["family", "mu0", "mu1", "phi", "theta", "sigma0", "sigma1", "noise", "y0"] {
            assert!(back.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn zero_scale_rejected_for_inference() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.5, 0.5, 0.0);
        assert!(spec.check_structure().is_ok());
        assert!(spec.validate().is_err());
    }

    #[test]
    fn simulate_matches_evaluation_along_sampled_path() {
        let spec = PotentialProcessSpec::ar1(0.0, 0.5, 0.5, 1.0);
        let m = AssignmentMechanism::bernoulli(0.5).unwrap();
        let sim = simulate(&spec, &m, 50, 9).unwrap();
        let y = evaluate_path(&spec, &sim.noise, &sim.treatments).unwrap();
        assert_eq!(y, sim.outcomes);
        assert_eq!(sim, simulate(&spec, &m, 50, 9).unwrap());
        assert!(sim.p1.iter().all(|&p| p == 0.5));
    }
}
