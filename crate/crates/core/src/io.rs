//! File formats: experiment and panel CSVs, mechanism JSON.
//!
//! Experiment columns are `t, ts, y, w, p1` (panel files add `unit_id`).
//! `t`, `y` and `w` are required. `p1` may be omitted when a mechanism is
//! supplied separately; `ts` is carried through untouched.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Panel, TreatmentPath, UnitExperiment};
use crate::mechanism::{AssignmentMechanism, Breakpoint, OutcomeFeedback};
use crate::slippage::parse_timestamp;

/// Mechanism description as stored in JSON.
///
/// ```json
/// {"kind": "piecewise", "breakpoints": [{"start": 1, "pi": 0.5}, {"start_ts": "2016-07-12", "pi": 0.25}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismConfig {
    #[serde(alias = "bernoulli-constant")]
    Bernoulli { pi: f64 },
    #[serde(alias = "bernoulli-piecewise")]
    Piecewise { breakpoints: Vec<BreakpointConfig> },
    #[serde(alias = "outcome_feedback")]
    OutcomeFeedback {
        base: f64,
        bump: f64,
        #[serde(default)]
        threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointConfig {
    /// 1-based index of the first period the probability applies to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    /// Alternatively, the first calendar time it applies to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ts: Option<String>,
    pub pi: f64,
}

impl MechanismConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the mechanism. Timestamp breakpoints need the sorted period
    /// timestamps; they start at the first period at or after `start_ts`.
    pub fn resolve(&self, stamps: Option<&[NaiveDateTime]>) -> Result<AssignmentMechanism> {
        match self {
            Self::Bernoulli { pi } => AssignmentMechanism::bernoulli(*pi),
            Self::OutcomeFeedback { base, bump, threshold } => {
                let rule = OutcomeFeedback {
                    base: *base,
                    bump: *bump,
                    threshold: *threshold,
                };
                Ok(AssignmentMechanism::history_dependent(rule))
            }
            Self::Piecewise { breakpoints } => {
                let mut resolved: Vec<Breakpoint> = Vec::with_capacity(breakpoints.len());
                for b in breakpoints {
                    let start = match (b.start, &b.start_ts) {
                        (Some(s), None) => s,
                        (None, Some(ts)) => {
                            let stamps = stamps.ok_or_else(|| {
                                Error::InvalidArgument("timestamp breakpoints need period timestamps".into())
                            })?;
                            let at = parse_timestamp(ts)?;
                            1 + stamps.partition_point(|s| *s < at)
                        }
                        _ => {
                            return Err(Error::InvalidArgument(
                                "each breakpoint needs exactly one of start or start_ts".into(),
                            ))
                        }
                    };
                    resolved.push(Breakpoint { start, pi: b.pi });
                }
                // A breakpoint that covers no period is superseded by the next one.
                resolved.sort_by_key(|b| b.start);
                let mut merged: Vec<Breakpoint> = Vec::with_capacity(resolved.len());
                for b in resolved {
                    match merged.last_mut() {
                        Some(last) if last.start == b.start => *last = b,
                        _ => merged.push(b),
                    }
                }
                AssignmentMechanism::piecewise(merged)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit_id: Option<String>,
    t: i64,
    #[serde(default)]
    ts: Option<String>,
    y: f64,
    w: u8,
    #[serde(default)]
    p1: Option<f64>,
}

/// Parsed experiment file, before mechanism attachment.
#[derive(Debug, Clone, Default)]
pub struct ExperimentTable {
    pub times: Vec<i64>,
    pub stamps: Vec<Option<String>>,
    pub outcomes: Vec<f64>,
    pub treatments: Vec<u8>,
    pub p1: Option<Vec<f64>>,
}

fn require_columns(headers: &csv::StringRecord, required: &[&str], what: &str) -> Result<bool> {
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(Error::Schema(format!("missing column {col:?} in {what}")));
        }
    }
    Ok(headers.iter().any(|h| h == "p1"))
}

fn push_row(table: &mut ExperimentTable, row: Row, has_p1: bool, line: usize) -> Result<()> {
    if row.w > 1 {
        return Err(Error::Schema(format!("row {line}: w = {} is not 0 or 1", row.w)));
    }
    table.times.push(row.t);
    table.stamps.push(row.ts.filter(|s| !s.is_empty()));
    table.outcomes.push(row.y);
    table.treatments.push(row.w);
    if has_p1 {
        let p = row
            .p1
            .ok_or_else(|| Error::Schema(format!("row {line}: empty p1 value")))?;
        table.p1.get_or_insert_with(Vec::new).push(p);
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader)
}

pub fn read_experiment_table<R: Read>(reader: R) -> Result<ExperimentTable> {
    let mut rdr = csv_reader(reader);
    let has_p1 = require_columns(rdr.headers()?, &["t", "y", "w"], "experiment file")?;
    let mut table = ExperimentTable::default();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        push_row(&mut table, row?, has_p1, i + 2)?;
    }
    if table.outcomes.is_empty() {
        return Err(Error::Empty("experiment file"));
    }
    Ok(table)
}

impl ExperimentTable {
    /// Attaches a mechanism. Without one the `p1` column is taken as a known
    /// history-free schedule.
    pub fn into_experiment(self, unit_id: &str, mechanism: Option<AssignmentMechanism>) -> Result<UnitExperiment> {
        let mechanism = match (mechanism, &self.p1) {
            (Some(m), _) => m,
            (None, Some(p1)) => AssignmentMechanism::from_schedule(p1)?,
            (None, None) => {
                return Err(Error::Schema(
                    "missing column \"p1\" and no mechanism supplied".into(),
                ))
            }
        };
        let treatments = TreatmentPath::new(self.treatments)?;
        Ok(UnitExperiment::from_parts(
            unit_id,
            self.times,
            self.outcomes,
            treatments,
            mechanism,
            self.p1,
        ))
    }

    /// Calendar timestamps, when every row has one.
    pub fn timestamps(&self) -> Result<Option<Vec<NaiveDateTime>>> {
        if self.stamps.iter().any(Option::is_none) {
            return Ok(None);
        }
        self.stamps
            .iter()
            .map(|s| parse_timestamp(s.as_deref().unwrap_or_default()))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Reads a single-unit experiment file.
pub fn read_experiment_csv<R: Read>(
    reader: R,
    unit_id: &str,
    mechanism: Option<AssignmentMechanism>,
) -> Result<UnitExperiment> {
    read_experiment_table(reader)?.into_experiment(unit_id, mechanism)
}

/// Reads a panel file (rows grouped by `unit_id`, any order across units).
pub fn read_panel_csv<R: Read>(
    reader: R,
    mechanism: Option<AssignmentMechanism>,
    independent: bool,
) -> Result<Panel> {
    let mut rdr = csv_reader(reader);
    let has_p1 = require_columns(rdr.headers()?, &["unit_id", "t", "y", "w"], "panel file")?;
    let mut tables: BTreeMap<String, ExperimentTable> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row: Row = row?;
        let id = row
            .unit_id
            .clone()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Schema(format!("row {}: empty unit_id", i + 2)))?;
        push_row(tables.entry(id).or_default(), row, has_p1, i + 2)?;
    }
    if tables.is_empty() {
        return Err(Error::Empty("panel file"));
    }
    let units = tables
        .into_iter()
        .map(|(id, table)| table.into_experiment(&id, mechanism.clone()))
        .collect::<Result<Vec<_>>>()?;
    Panel::new(units, independent)
}

/// Writes `t, ts, y, w, p1` (with `unit_id` first when requested).
pub fn write_experiment_csv<W: Write>(
    writer: W,
    e: &UnitExperiment,
    stamps: Option<&[String]>,
    with_unit_id: bool,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    write_rows(&mut wtr, e, stamps, with_unit_id, true)?;
    wtr.flush()?;
    Ok(())
}

/// Writes several units into one panel file, in `unit_id` order.
pub fn write_panel_csv<W: Write>(writer: W, panel: &Panel) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (i, u) in panel.units().iter().enumerate() {
        write_rows(&mut wtr, u, None, true, i == 0)?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_rows<W: Write>(
    wtr: &mut csv::Writer<W>,
    e: &UnitExperiment,
    stamps: Option<&[String]>,
    with_unit_id: bool,
    header: bool,
) -> Result<()> {
    let p1 = e.propensities()?;
    if header {
        if with_unit_id {
            wtr.write_record(["unit_id", "t", "ts", "y", "w", "p1"])?;
        } else {
            wtr.write_record(["t", "ts", "y", "w", "p1"])?;
        }
    }
    for (i, &p) in p1.iter().enumerate() {
        let ts = stamps.and_then(|s| s.get(i)).cloned().unwrap_or_default();
        let mut rec = Vec::with_capacity(6);
        if with_unit_id {
            rec.push(e.unit_id.clone());
        }
        rec.extend([
            e.times[i].to_string(),
            ts,
            format_float(e.outcomes[i]),
            e.treatments[i].to_string(),
            format_float(p),
        ]);
        wtr.write_record(&rec)?;
    }
    Ok(())
}

/// Shortest representation that parses back to the same value.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}
