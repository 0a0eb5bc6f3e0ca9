//! Adapted assignment mechanisms.
//!
//! A mechanism emits `p_t(1) = Pr(W_t = 1 | history)` from the treatments and
//! outcomes strictly before `t`. Times are 1-based throughout the public API.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::TreatmentPath;
use crate::rng::{stream_rng, StreamRng};

/// Probabilities closer than this to 0 or 1 are treated as violating strict
/// interiority.
pub const PROB_EPS: f64 = 1e-12;

#[inline]
pub fn is_interior(p: f64) -> bool {
    p.is_finite() && (PROB_EPS..=1.0 - PROB_EPS).contains(&p)
}

pub(crate) fn check_interior(t: usize, prob: f64) -> Result<f64> {
    if is_interior(prob) {
        Ok(prob)
    } else {
        Err(Error::ProbabilityOutOfRange { t, prob })
    }
}

/// Probability of receiving `arm` when the treatment probability is `p1`.
#[inline]
pub fn arm_prob(p1: f64, arm: u8) -> f64 {
    if arm == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// A deterministic rule mapping `(w_{1:t-1}, y_{1:t-1})` to `p_t(1)`.
///
/// Covariates can be supplied by packing them into the outcome history.
pub trait AssignmentRule: Send + Sync {
    fn prob_treat(&self, past_w: &[u8], past_y: &[f64]) -> f64;

    fn describe(&self) -> String {
        "custom history-dependent rule".to_string()
    }
}

/// `p_t(1) = base + bump * 1{y_{t-1} > threshold}`, clipped into `[PROB_EPS, 1 - PROB_EPS]`.
/// At `t = 1` the indicator is taken to be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFeedback {
    pub base: f64,
    pub bump: f64,
    #[serde(default)]
    pub threshold: f64,
}

impl AssignmentRule for OutcomeFeedback {
    fn prob_treat(&self, _past_w: &[u8], past_y: &[f64]) -> f64 {
        let hit = past_y.last().is_some_and(|&y| y > self.threshold);
        let p = self.base + if hit { self.bump } else { 0.0 };
        p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    }

    fn describe(&self) -> String {
        format!(
            "outcome feedback: {} + {}*1{{y[t-1] > {}}}",
            self.base, self.bump, self.threshold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    /// First time (1-based) at which `pi` applies.
    pub start: usize,
    pub pi: f64,
}

#[derive(Clone)]
pub enum AssignmentMechanism {
    /// i.i.d. Bernoulli(pi).
    Bernoulli { pi: f64 },
    /// Bernoulli with a probability that changes at fixed times.
    Piecewise { breakpoints: Vec<Breakpoint> },
    /// Probability depends on past treatments and outcomes.
    HistoryDependent(Arc<dyn AssignmentRule>),
}

impl fmt::Debug for AssignmentMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bernoulli { pi } => f.debug_struct("Bernoulli").field("pi", pi).finish(),
            Self::Piecewise { breakpoints } => f
                .debug_struct("Piecewise")
                .field("breakpoints", breakpoints)
                .finish(),
            Self::HistoryDependent(rule) => {
                f.debug_tuple("HistoryDependent").field(&rule.describe()).finish()
            }
        }
    }
}

impl AssignmentMechanism {
    pub fn bernoulli(pi: f64) -> Result<Self> {
        let m = Self::Bernoulli { pi };
        m.check()?;
        Ok(m)
    }

    /// Breakpoints are sorted by start time; the first must start at `t = 1`.
    pub fn piecewise(mut breakpoints: Vec<Breakpoint>) -> Result<Self> {
        breakpoints.sort_by_key(|b| b.start);
        let m = Self::Piecewise { breakpoints };
        m.check()?;
        Ok(m)
    }

    pub fn history_dependent(rule: impl AssignmentRule + 'static) -> Self {
        Self::HistoryDependent(Arc::new(rule))
    }

    /// Builds a piecewise mechanism reproducing a known per-step probability
    /// column, merging runs of equal values. Values outside `(0, 1)` are kept
    /// so that [`crate::validate_experiment`] can report them by period.
    pub fn from_schedule(p1: &[f64]) -> Result<Self> {
        if p1.is_empty() {
            return Err(Error::Empty("probability schedule"));
        }
        let mut breakpoints: Vec<Breakpoint> = Vec::new();
        for (i, &pi) in p1.iter().enumerate() {
            if breakpoints.last().is_none_or(|b| b.pi != pi) {
                breakpoints.push(Breakpoint { start: i + 1, pi });
            }
        }
        Ok(Self::Piecewise { breakpoints })
    }

    /// Validity of the mechanism's parameters.
    pub fn check(&self) -> Result<()> {
        self.check_structure()?;
        if let Self::Piecewise { breakpoints } = self {
            for b in breakpoints {
                check_interior(b.start, b.pi)?;
            }
        }
        Ok(())
    }

    /// Like [`Self::check`] but leaves piecewise probabilities to be checked
    /// period by period.
    pub fn check_structure(&self) -> Result<()> {
        match self {
            Self::Bernoulli { pi } => check_interior(1, *pi).map(|_| ()),
            Self::Piecewise { breakpoints } => {
                let first = breakpoints
                    .first()
                    .ok_or(Error::Empty("piecewise breakpoints"))?;
                if first.start != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "first breakpoint must start at t=1, got t={}",
                        first.start
                    )));
                }
                for pair in breakpoints.windows(2) {
                    if pair[1].start <= pair[0].start {
                        return Err(Error::InvalidArgument(format!(
                            "duplicate breakpoint at t={}",
                            pair[1].start
                        )));
                    }
                }
                Ok(())
            }
            Self::HistoryDependent(_) => Ok(()),
        }
    }

    /// True when `p_t(1)` ignores the realized history.
    pub fn is_history_free(&self) -> bool {
        !matches!(self, Self::HistoryDependent(_))
    }

    /// `p_t(1)` for 1-based `t`. `past_w` and `past_y` hold data before `t`;
    /// history-free mechanisms ignore them.
    pub fn prob_treat(&self, t: usize, past_w: &[u8], past_y: &[f64]) -> Result<f64> {
        let p = match self {
            Self::Bernoulli { pi } => *pi,
            Self::Piecewise { breakpoints } => {
                let idx = breakpoints.partition_point(|b| b.start <= t);
                if idx == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "no breakpoint covers t={t}"
                    )));
                }
                breakpoints[idx - 1].pi
            }
            Self::HistoryDependent(rule) => rule.prob_treat(past_w, past_y),
        };
        check_interior(t, p)
    }

    /// Adapted path propensity `Pr(W_{t-p:t} = suffix | F_{t-p-1})`.
    ///
    /// `history` is `w_{1:t-p-1}`; `y_obs` supplies outcomes for the
    /// history-dependent case (the observed outcomes, which is valid under the
    /// sharp null). The result is the product of sequential one-step factors.
    pub fn path_propensity(&self, history: &[u8], y_obs: &[f64], suffix: &[u8]) -> Result<f64> {
        if suffix.is_empty() {
            return Err(Error::InvalidArgument("suffix must be non-empty".into()));
        }
        let start = history.len();
        if !self.is_history_free() && y_obs.len() + 1 < start + suffix.len() {
            return Err(Error::LengthMismatch {
                what: "outcome history for path propensity",
                expected: start + suffix.len() - 1,
                actual: y_obs.len(),
            });
        }
        let mut buf: Vec<u8> = Vec::with_capacity(start + suffix.len());
        buf.extend_from_slice(history);
        let mut prob = 1.0;
        for &arm in suffix {
            if arm > 1 {
                return Err(Error::InvalidTreatment {
                    t: buf.len() + 1,
                    value: arm,
                });
            }
            let t = buf.len() + 1;
            let past_y = if self.is_history_free() {
                &[][..]
            } else {
                &y_obs[..t - 1]
            };
            let p1 = self.prob_treat(t, &buf, past_y)?;
            prob *= arm_prob(p1, arm);
            buf.push(arm);
        }
        Ok(prob)
    }

    /// `p_t(1)` along a realized path: element `t-1` is `p_t(1)`.
    pub fn realized_probabilities(&self, w: &[u8], y: &[f64]) -> Result<Vec<f64>> {
        (1..=w.len())
            .map(|t| {
                let past_y = if self.is_history_free() {
                    &[][..]
                } else {
                    &y[..t - 1]
                };
                self.prob_treat(t, &w[..t - 1], past_y)
            })
            .collect()
    }
}

/// A resampled treatment path with its realized `p_t(1)` path.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub path: TreatmentPath,
    pub p1: Vec<f64>,
}

/// Draws `w_{1:len}` sequentially with `p_t(1)` computed from the sampled
/// treatments and `y_obs`. Deterministic in `seed`.
pub fn sample_path(
    mechanism: &AssignmentMechanism,
    y_obs: &[f64],
    len: usize,
    seed: u64,
) -> Result<SampledPath> {
    let mut rng = stream_rng(seed);
    let mut w = Vec::with_capacity(len);
    let mut p1 = Vec::with_capacity(len);
    sample_into(mechanism, y_obs, len, &mut rng, &mut w, &mut p1)?;
    Ok(SampledPath {
        path: TreatmentPath::new(w)?,
        p1,
    })
}

/// Buffer-reusing form of [`sample_path`] for hot loops.
pub fn sample_into(
    mechanism: &AssignmentMechanism,
    y_obs: &[f64],
    len: usize,
    rng: &mut StreamRng,
    w: &mut Vec<u8>,
    p1: &mut Vec<f64>,
) -> Result<()> {
    if len == 0 {
        return Err(Error::Empty("treatment path"));
    }
    mechanism.check()?;
    if !mechanism.is_history_free() && y_obs.len() + 1 < len {
        return Err(Error::LengthMismatch {
            what: "outcomes for history-dependent sampling",
            expected: len - 1,
            actual: y_obs.len(),
        });
    }
    w.clear();
    p1.clear();
    match mechanism {
        AssignmentMechanism::Bernoulli { pi } => {
            for _ in 0..len {
                w.push(u8::from(rng.random::<f64>() < *pi));
                p1.push(*pi);
            }
        }
        _ => {
            for t in 1..=len {
                let past_y = if mechanism.is_history_free() {
                    &[][..]
                } else {
                    &y_obs[..t - 1]
                };
                let p = mechanism.prob_treat(t, w, past_y)?;
                w.push(u8::from(rng.random::<f64>() < p));
                p1.push(p);
            }
        }
    }
    Ok(())
}
