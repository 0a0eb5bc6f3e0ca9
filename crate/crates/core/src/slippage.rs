//! Execution-cost outcomes from order and trade records.
//!
//! Slippage is `b * 10000 * (VWAP - mid) / mid` basis points with `b = +1`
//! for sells and `b = -1` for buys. With this sign a sell filled above mid
//! scores positive, as does a buy filled below mid.

use std::collections::HashSet;
use std::io::Read;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{TreatmentPath, UnitExperiment};
use crate::mechanism::AssignmentMechanism;

/// Volume fractions within this distance of 1 are accepted silently.
pub const VOLUME_TOL: f64 = 1e-9;
/// Beyond this distance the order is rejected.
pub const VOLUME_HARD_TOL: f64 = 1e-6;

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses `YYYY-MM-DD[( |T)HH:MM[:SS[.fff]]]`, with an optional trailing `Z`.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    for fmt in DATETIME_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists"));
    }
    Err(Error::InvalidArgument(format!("unparseable timestamp {s:?}")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    /// `b_t`.
    pub fn sign(self) -> f64 {
        match self {
            Self::Sell => 1.0,
            Self::Buy => -1.0,
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" | "b" => Ok(Self::Buy),
            "sell" | "s" => Ok(Self::Sell),
            other => Err(Error::InvalidArgument(format!("unknown side {other:?}"))),
        }
    }
}

/// Execution algorithm; `B` is the treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecMethod {
    A,
    B,
}

impl ExecMethod {
    pub fn arm(self) -> u8 {
        match self {
            Self::A => 0,
            Self::B => 1,
        }
    }
}

impl FromStr for ExecMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}; expected A or B"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    pub time: NaiveDateTime,
    pub price: f64,
    pub volume_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRecord {
    pub order_id: String,
    pub randomization_time: NaiveDateTime,
    pub side: Side,
    pub mid_price: f64,
    pub method: ExecMethod,
    pub trades: Vec<Trade>,
}

fn order_error(o: &OrderRecord, reason: impl Into<String>) -> Error {
    Error::InvalidOrder {
        order_id: o.order_id.clone(),
        reason: reason.into(),
    }
}

/// Slippage of one order in basis points.
pub fn compute_slippage(o: &OrderRecord) -> Result<f64> {
    if !(o.mid_price.is_finite() && o.mid_price > 0.0) {
        return Err(order_error(o, format!("mid price {} must be positive", o.mid_price)));
    }
    if o.trades.is_empty() {
        return Err(order_error(o, "no trades"));
    }
    let mut volume = 0.0;
    let mut vwap = 0.0;
    for tr in &o.trades {
        if !(tr.volume_fraction.is_finite() && tr.volume_fraction > 0.0) {
            return Err(order_error(o, format!("volume fraction {} must be positive", tr.volume_fraction)));
        }
        if !(tr.price.is_finite() && tr.price > 0.0) {
            return Err(order_error(o, format!("trade price {} must be positive", tr.price)));
        }
        if tr.time < o.randomization_time {
            return Err(order_error(o, "trade precedes the randomization time"));
        }
        volume += tr.volume_fraction;
        vwap += tr.volume_fraction * tr.price;
    }
    let gap = (volume - 1.0).abs();
    if gap > VOLUME_HARD_TOL {
        return Err(order_error(o, format!("volume fractions sum to {volume}, not 1")));
    }
    if gap > VOLUME_TOL {
        log::warn!("order {}: volume fractions sum to {volume}", o.order_id);
    }
    Ok(o.side.sign() * 10000.0 * (vwap - o.mid_price) / o.mid_price)
}

/// Orders sorted by `(randomization_time, order_id)`.
pub fn sort_orders(orders: &mut [OrderRecord]) {
    orders.sort_by(|a, b| {
        a.randomization_time
            .cmp(&b.randomization_time)
            .then_with(|| a.order_id.cmp(&b.order_id))
    });
}

/// Builds the outcome series: orders sorted, `w_t = 1` for method B and
/// `y_t` the slippage. Returns the experiment and the sorted times.
pub fn orders_to_experiment(
    mut orders: Vec<OrderRecord>,
    unit_id: &str,
    mechanism: AssignmentMechanism,
) -> Result<(UnitExperiment, Vec<NaiveDateTime>)> {
    if orders.is_empty() {
        return Err(Error::Empty("order list"));
    }
    let mut seen = HashSet::new();
    for o in &orders {
        if !seen.insert(o.order_id.as_str()) {
            return Err(order_error(o, "duplicate order_id"));
        }
    }
    sort_orders(&mut orders);
    let outcomes = orders.par_iter().map(compute_slippage).collect::<Result<Vec<f64>>>()?;
    let treatments = TreatmentPath::new(orders.iter().map(|o| o.method.arm()).collect())?;
    let p1 = mechanism.realized_probabilities(&treatments, &outcomes)?;
    let times = (1..=orders.len() as i64).collect();
    let stamps = orders.iter().map(|o| o.randomization_time).collect();
    let e = UnitExperiment::from_parts(unit_id, times, outcomes, treatments, mechanism, Some(p1));
    Ok((e, stamps))
}

#[derive(Debug, Deserialize)]
struct TradeRow {
    order_id: String,
    ts: String,
    side: String,
    mid_price: f64,
    method: String,
    trade_ts: String,
    trade_price: f64,
    volume_fraction: f64,
}

pub const ORDER_COLUMNS: [&str; 8] = [
    "order_id",
    "ts",
    "side",
    "mid_price",
    "method",
    "trade_ts",
    "trade_price",
    "volume_fraction",
];

/// Reads the one-row-per-trade orders file. Rows of an order must be
/// contiguous and agree on the order-level fields.
pub fn read_orders_csv<R: Read>(reader: R) -> Result<Vec<OrderRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ORDER_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema(format!("missing column {col:?} in orders file")));
        }
    }
    let mut orders: Vec<OrderRecord> = Vec::new();
    let mut closed = HashSet::new();
    for row in rdr.deserialize::<TradeRow>() {
        let row = row?;
        let bad = |reason: String| Error::InvalidOrder {
            order_id: row.order_id.clone(),
            reason,
        };
        let trade = Trade {
            time: parse_timestamp(&row.trade_ts).map_err(|e| bad(e.to_string()))?,
            price: row.trade_price,
            volume_fraction: row.volume_fraction,
        };
        let time = parse_timestamp(&row.ts).map_err(|e| bad(e.to_string()))?;
        let side: Side = row.side.parse().map_err(|e: Error| bad(e.to_string()))?;
        let method: ExecMethod = row.method.parse().map_err(|e: Error| bad(e.to_string()))?;
        match orders.last_mut() {
            Some(last) if last.order_id == row.order_id => {
                if last.randomization_time != time
                    || last.side != side
                    || last.method != method
                    || last.mid_price != row.mid_price
                {
                    return Err(bad("order-level fields differ between its trade rows".into()));
                }
                last.trades.push(trade);
            }
            _ => {
                if let Some(last) = orders.last() {
                    closed.insert(last.order_id.clone());
                }
                if closed.contains(&row.order_id) {
                    return Err(bad("duplicate order_id (rows are not contiguous)".into()));
                }
                orders.push(OrderRecord {
                    order_id: row.order_id.clone(),
                    randomization_time: time,
                    side,
                    mid_price: row.mid_price,
                    method,
                    trades: vec![trade],
                });
            }
        }
    }
    Ok(orders)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn order(id: &str, side: Side, mid: f64, method: ExecMethod, trades: &[(f64, f64)]) -> OrderRecord {
        OrderRecord {
            order_id: id.into(),
            randomization_time: ts("2016-07-01T09:00:00"),
            side,
            mid_price: mid,
            method,
            trades: trades
                .iter()
                .map(|&(price, volume_fraction)| Trade {
                    time: ts("2016-07-01T09:05:00"),
                    price,
                    volume_fraction,
                })
                .collect(),
        }
    }

    #[test]
    fn hand_examples() {
        assert_eq!(compute_slippage(&order("a", Side::Buy, 100.0, ExecMethod::A, &[(100.5, 1.0)])).unwrap(), -50.0);
        assert_eq!(
            compute_slippage(&order("b", Side::Sell, 100.0, ExecMethod::A, &[(100.2, 0.5), (99.8, 0.5)])).unwrap(),
            0.0
        );
        assert_eq!(compute_slippage(&order("c", Side::Sell, 200.0, ExecMethod::B, &[(201.0, 1.0)])).unwrap(), 50.0);
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(compute_slippage(&order("a", Side::Buy, 0.0, ExecMethod::A, &[(1.0, 1.0)])).is_err());
        assert!(compute_slippage(&order("a", Side::Buy, 1.0, ExecMethod::A, &[(1.0, 0.9)])).is_err());
        assert!(compute_slippage(&order("a", Side::Buy, 1.0, ExecMethod::A, &[(1.0, 1.0 + 5e-7)])).is_ok());
        let mut early = order("a", Side::Buy, 1.0, ExecMethod::A, &[(1.0, 1.0)]);
        early.trades[0].time = ts("2016-07-01T08:00:00");
        assert!(compute_slippage(&early).is_err());
    }

    #[test]
    fn timestamps() {
        assert_eq!(ts("2016-07-12"), ts("2016-07-12T00:00:00"));
        assert_eq!(ts("2016-07-12 10:00"), ts("2016-07-12T10:00:00.000"));
        assert_eq!(ts("2016-07-12T10:00:00Z"), ts("2016-07-12T10:00:00"));
        assert!(parse_timestamp("12/07/2016").is_err());
    }

    #[test]
    fn experiment_mapping_and_sorting() {
        let mut orders = vec![
            order("3", Side::Buy, 100.0, ExecMethod::A, &[(100.0, 1.0)]),
            order("1", Side::Buy, 100.0, ExecMethod::A, &[(100.0, 1.0)]),
            order("2", Side::Sell, 100.0, ExecMethod::B, &[(101.0, 1.0)]),
        ];
        orders[0].randomization_time = ts("2016-07-03");
        orders[1].randomization_time = ts("2016-07-01");
        orders[2].randomization_time = ts("2016-07-01");
        for o in &mut orders {
            for t in &mut o.trades {
                t.time = ts("2016-07-05");
            }
        }
        let m = AssignmentMechanism::bernoulli(0.5).unwrap();
        let (e, stamps) = orders_to_experiment(orders, "u", m).unwrap();
        assert_eq!(e.treatments.as_slice(), &[0, 1, 0]);
        assert_eq!(e.outcomes, vec![0.0, 100.0, 0.0]);
        assert!(stamps.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn empty_and_duplicates_rejected() {
        let m = AssignmentMechanism::bernoulli(0.5).unwrap();
        assert!(orders_to_experiment(vec![], "u", m.clone()).is_err());
        let o = order("x", Side::Buy, 1.0, ExecMethod::A, &[(1.0, 1.0)]);
        assert!(orders_to_experiment(vec![o.clone(), o], "u", m).is_err());
    }

    #[test]
    fn csv_grouping() {
        let text = "order_id,ts,side,mid_price,method,trade_ts,trade_price,volume_fraction\n\
                    o1,2016-07-01T09:00:00,sell,100,A,2016-07-01T09:01:00,100.2,0.5\n\
                    o1,2016-07-01T09:00:00,sell,100,A,2016-07-01T09:02:00,99.8,0.5\n\
                    o2,2016-07-01T10:00:00,buy,100,B,2016-07-01T10:01:00,100.5,1\n";
        let orders = read_orders_csv(text.as_bytes()).unwrap();
        assert_eq!(orders.len(), 2);
        assert_eq!(orders[0].trades.len(), 2);
        assert_eq!(compute_slippage(&orders[1]).unwrap(), -50.0);

        let split = format!("{text}o1,2016-07-01T09:00:00,sell,100,A,2016-07-01T09:03:00,100,0.1\n");
        assert!(read_orders_csv(split.as_bytes()).is_err());

        let missing = "order_id,ts,side,mid_price,method,trade_ts,trade_price\n";
        match read_orders_csv(missing.as_bytes()) {
            Err(Error::Schema(msg)) => assert!(msg.contains("volume_fraction")),
            other => panic!("{other:?}"),
        }
    }
}
