//! Treatment paths, single-unit experiments, panels and structural validation.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::{is_interior, AssignmentMechanism};

/// Tolerance for agreement between stored probabilities and the mechanism.
pub const CONSISTENCY_TOL: f64 = 1e-12;

/// Binary treatment path `w_{1:T}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreatmentPath(Vec<u8>);

impl TreatmentPath {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("treatment path"));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidTreatment { t: i + 1, value: v });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl Deref for TreatmentPath {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    LengthMismatch,
    NonFiniteOutcome,
    TimesNotIncreasing,
    /// Strictly interior assignment probabilities.
    ProbabilisticAssignment,
    /// Stored probabilities must match what the mechanism emits.
    MechanismConsistency,
    InvalidMechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// 1-based time index, when the violation is local.
    pub index: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(t) => write!(f, "[{:?} at t={}] {}", self.rule, t, self.message),
            None => write!(f, "[{:?}] {}", self.rule, self.message),
        }
    }
}

/// One unit's observed series.
///
/// Construction through [`UnitExperiment::from_parts`] does not check the
/// structural assumptions; use [`validate_experiment`] (or
/// [`UnitExperiment::new`], which rejects any violation).
#[derive(Debug, Clone)]
pub struct UnitExperiment {
    pub unit_id: String,
    pub times: Vec<i64>,
    pub outcomes: Vec<f64>,
    pub treatments: TreatmentPath,
    pub mechanism: AssignmentMechanism,
    /// Explicitly recorded `p_t(1)`, if any.
    pub probabilities: Option<Vec<f64>>,
}

impl UnitExperiment {
    pub fn from_parts(
        unit_id: impl Into<String>,
        times: Vec<i64>,
        outcomes: Vec<f64>,
        treatments: TreatmentPath,
        mechanism: AssignmentMechanism,
        probabilities: Option<Vec<f64>>,
    ) -> Self {
        Self {
            unit_id: unit_id.into(),
            times,
            outcomes,
            treatments,
            mechanism,
            probabilities,
        }
    }

    /// Validated constructor.
    pub fn new(
        unit_id: impl Into<String>,
        times: Vec<i64>,
        outcomes: Vec<f64>,
        treatments: TreatmentPath,
        mechanism: AssignmentMechanism,
        probabilities: Option<Vec<f64>>,
    ) -> Result<Self> {
        let e = Self::from_parts(unit_id, times, outcomes, treatments, mechanism, probabilities);
        let report = validate_experiment(&e);
        if report.is_empty() {
            Ok(e)
        } else {
            Err(Error::Validation(
                report.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            ))
        }
    }

    /// Experiment with times `1..=T` and no stored probabilities.
    pub fn simple(
        unit_id: impl Into<String>,
        outcomes: Vec<f64>,
        treatments: TreatmentPath,
        mechanism: AssignmentMechanism,
    ) -> Result<Self> {
        let times = (1..=outcomes.len() as i64).collect();
        Self::new(unit_id, times, outcomes, treatments, mechanism, None)
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Realized `p_t(1)`: the stored column if present, otherwise the
    /// mechanism evaluated along the observed history.
    pub fn propensities(&self) -> Result<Vec<f64>> {
        match &self.probabilities {
            Some(p) => {
                for (i, &v) in p.iter().enumerate() {
                    if !is_interior(v) {
                        return Err(Error::ProbabilityOutOfRange { t: i + 1, prob: v });
                    }
                }
                Ok(p.clone())
            }
            None => self
                .mechanism
                .realized_probabilities(&self.treatments, &self.outcomes),
        }
    }
}

/// Structural checks on an experiment. An empty report means every invariant
/// holds.
pub fn validate_experiment(e: &UnitExperiment) -> Vec<Violation> {
    let mut report = Vec::new();
    let n = e.outcomes.len();

    if e.treatments.len() != n {
        report.push(Violation {
            index: None,
            rule: Rule::LengthMismatch,
            message: format!("treatments length {} vs outcomes length {n}", e.treatments.len()),
        });
    }
    if e.times.len() != n {
        report.push(Violation {
            index: None,
            rule: Rule::LengthMismatch,
            message: format!("times length {} vs outcomes length {n}", e.times.len()),
        });
    }
    if let Some(p) = &e.probabilities {
        if p.len() != n {
            report.push(Violation {
                index: None,
                rule: Rule::LengthMismatch,
                message: format!("probabilities length {} vs outcomes length {n}", p.len()),
            });
        }
    }
    for (i, y) in e.outcomes.iter().enumerate() {
        if !y.is_finite() {
            report.push(Violation {
                index: Some(i + 1),
                rule: Rule::NonFiniteOutcome,
                message: format!("outcome {y} is not finite"),
            });
        }
    }
    for (i, pair) in e.times.windows(2).enumerate() {
        if pair[1] <= pair[0] {
            report.push(Violation {
                index: Some(i + 2),
                rule: Rule::TimesNotIncreasing,
                message: format!("time label {} does not exceed {}", pair[1], pair[0]),
            });
        }
    }
    if let Err(err) = e.mechanism.check_structure() {
        report.push(Violation {
            index: None,
            rule: Rule::InvalidMechanism,
            message: err.to_string(),
        });
        return report;
    }

    let len = n.min(e.treatments.len());
    let w = &e.treatments[..len];
    let y = &e.outcomes[..len];
    for t in 1..=len {
        let stored = e.probabilities.as_ref().and_then(|p| p.get(t - 1).copied());
        if let Some(s) = stored {
            if !is_interior(s) {
                report.push(Violation {
                    index: Some(t),
                    rule: Rule::ProbabilisticAssignment,
                    message: format!("stored p_t(1) = {s} is not strictly inside (0, 1)"),
                });
                continue;
            }
        }
        let past_y = if e.mechanism.is_history_free() {
            &[][..]
        } else {
            &y[..t - 1]
        };
        match e.mechanism.prob_treat(t, &w[..t - 1], past_y) {
            Ok(expected) => {
                if let Some(s) = stored {
                    if (s - expected).abs() > CONSISTENCY_TOL {
                        report.push(Violation {
                            index: Some(t),
                            rule: Rule::MechanismConsistency,
                            message: format!("stored p_t(1) = {s} but mechanism gives {expected}"),
                        });
                    }
                }
            }
            Err(err) => report.push(Violation {
                index: Some(t),
                rule: Rule::ProbabilisticAssignment,
                message: err.to_string(),
            }),
        }
    }
    report
}

/// A collection of unit experiments, ordered by `unit_id`.
#[derive(Debug, Clone)]
pub struct Panel {
    units: Vec<UnitExperiment>,
    /// Treatment paths are assigned independently across units.
    pub independent: bool,
}

impl Panel {
    pub fn new(mut units: Vec<UnitExperiment>, independent: bool) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Empty("panel"));
        }
        let mut seen = HashSet::new();
        for u in &units {
            if !seen.insert(u.unit_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate unit_id {:?}",
                    u.unit_id
                )));
            }
        }
        units.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        Ok(Self { units, independent })
    }

    pub fn units(&self) -> &[UnitExperiment] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}
