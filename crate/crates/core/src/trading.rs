//! Battery arbitrage on day-ahead prices driven by interval forecasts, the
//! perfect-foresight bound, and two reference strategies.
//!
//! Prices are per MWh. Selling one MWh out of the battery earns `ξ·p`;
//! storing one MWh costs `p/ξ`. Limit orders clear at the auction price
//! whenever the limit is crossed.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::distribution::{PointDay, QuantileDay};
use crate::error::{Error, Result};
use crate::metrics::interval;
use crate::HOURS;

pub const CAPACITY: u8 = 2;
pub const INITIAL_CHARGE: u8 = 1;
pub const DEFAULT_EFFICIENCY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Order {
    pub hour: usize,
    pub side: Side,
    /// `None` for an unlimited order.
    pub limit: Option<f64>,
}

/// Which rule produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// Charge 1: a limit pair, or nothing.
    Pair,
    /// Charge 2: unlimited sell plus limit sell and limit buy.
    FullBattery,
    /// Charge 0: unlimited buy plus limit sell and limit buy.
    EmptyBattery,
    /// Fallback single unlimited order at the margins.
    Rebalance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayPlan {
    pub orders: Vec<Order>,
    pub kind: PlanKind,
    /// Left minus right side of the profitability inequality.
    pub condition: Option<f64>,
    /// The profitability inequality held.
    pub profitable: bool,
    /// Execute limit orders only if every one of them fills.
    pub all_or_none: bool,
}

/// Forecast inputs for one day: point forecast and interval bounds.
#[derive(Debug, Clone, Copy)]
pub struct DayForecast<'a> {
    pub point: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v < x[best] {
            best = i;
        }
    }
    best
}

fn check_forecast(fc: &DayForecast) -> Result<usize> {
    let n = fc.point.len();
    if n < 2 || fc.lower.len() != n || fc.upper.len() != n {
        return Err(Error::Invalid("malformed trading forecast row".into()));
    }
    if fc
        .point
        .iter()
        .chain(fc.lower)
        .chain(fc.upper)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("trading forecast"));
    }
    Ok(n)
}

fn charge1_plan(fc: &DayForecast, xi: f64) -> DayPlan {
    let hs = argmax(fc.point);
    let hb = argmin(fc.point);
    let cond = xi * fc.lower[hs] - fc.upper[hb] / xi;
    let profitable = cond > 0.0 && hs != hb;
    let orders = if profitable {
        vec![
            Order { hour: hs, side: Side::Sell, limit: Some(fc.lower[hs]) },
            Order { hour: hb, side: Side::Buy, limit: Some(fc.upper[hb]) },
        ]
    } else {
        Vec::new()
    };
    DayPlan {
        orders,
        kind: PlanKind::Pair,
        condition: Some(cond),
        profitable,
        all_or_none: false,
    }
}

/// Full battery: best `(s1, s2, b)` on point forecasts with `s1 < b`.
fn full_battery_plan(fc: &DayForecast, xi: f64, n: usize) -> DayPlan {
    let p = fc.point;
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for s1 in 0..n {
        for b in s1 + 1..n {
            for s2 in 0..n {
                if s2 == s1 || s2 == b {
                    continue;
                }
                let v = xi * p[s1] + xi * p[s2] - p[b] / xi;
                if best.is_none_or(|t| v > t.0) {
                    best = Some((v, s1, s2, b));
                }
            }
        }
    }
    let s3 = argmax(p);
    let fallback = Order { hour: s3, side: Side::Sell, limit: None };
    let Some((_, s1, s2, b)) = best else {
        return DayPlan {
            orders: vec![fallback],
            kind: PlanKind::Rebalance,
            condition: None,
            profitable: false,
            all_or_none: false,
        };
    };
    let cond = xi * p[s1] + xi * fc.lower[s2] - fc.upper[b] / xi - xi * p[s3];
    if cond > 0.0 {
        DayPlan {
            orders: vec![
                Order { hour: s1, side: Side::Sell, limit: None },
                Order { hour: s2, side: Side::Sell, limit: Some(fc.lower[s2]) },
                Order { hour: b, side: Side::Buy, limit: Some(fc.upper[b]) },
            ],
            kind: PlanKind::FullBattery,
            condition: Some(cond),
            profitable: true,
            all_or_none: false,
        }
    } else {
        DayPlan {
            orders: vec![fallback],
            kind: PlanKind::Rebalance,
            condition: Some(cond),
            profitable: false,
            all_or_none: false,
        }
    }
}

/// Empty battery: best `(b1, s, b2)` on point forecasts with `b1 < s`.
fn empty_battery_plan(fc: &DayForecast, xi: f64, n: usize) -> DayPlan {
    let p = fc.point;
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for b1 in 0..n {
        for s in b1 + 1..n {
            for b2 in 0..n {
                if b2 == b1 || b2 == s {
                    continue;
                }
                let v = -p[b1] / xi + xi * p[s] - p[b2] / xi;
                if best.is_none_or(|t| v > t.0) {
                    best = Some((v, b1, s, b2));
                }
            }
        }
    }
    let b3 = argmin(p);
    let fallback = Order { hour: b3, side: Side::Buy, limit: None };
    let Some((_, b1, s, b2)) = best else {
        return DayPlan {
            orders: vec![fallback],
            kind: PlanKind::Rebalance,
            condition: None,
            profitable: false,
            all_or_none: false,
        };
    };
    let cond = -p[b1] / xi + xi * fc.lower[s] - fc.upper[b2] / xi + p[b3] / xi;
    if cond > 0.0 {
        DayPlan {
            orders: vec![
                Order { hour: b1, side: Side::Buy, limit: None },
                Order { hour: s, side: Side::Sell, limit: Some(fc.lower[s]) },
                Order { hour: b2, side: Side::Buy, limit: Some(fc.upper[b2]) },
            ],
            kind: PlanKind::EmptyBattery,
            condition: Some(cond),
            profitable: true,
            all_or_none: false,
        }
    } else {
        DayPlan {
            orders: vec![fallback],
            kind: PlanKind::Rebalance,
            condition: Some(cond),
            profitable: false,
            all_or_none: false,
        }
    }
}

/// Orders for one day given the opening charge. On the final day the plan
/// must bring the battery back to one MWh.
pub fn plan_day(fc: &DayForecast, charge: u8, xi: f64, final_day: bool) -> Result<DayPlan> {
    let n = check_forecast(fc)?;
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::Invalid(format!("efficiency {xi} outside (0, 1]")));
    }
    let rebalance = |side, hour| DayPlan {
        orders: vec![Order { hour, side, limit: None }],
        kind: PlanKind::Rebalance,
        condition: None,
        profitable: false,
        all_or_none: false,
    };
    Ok(match (charge, final_day) {
        (1, false) => charge1_plan(fc, xi),
        (1, true) => DayPlan {
            all_or_none: true,
            ..charge1_plan(fc, xi)
        },
        (2, false) => full_battery_plan(fc, xi, n),
        (0, false) => empty_battery_plan(fc, xi, n),
        (2, true) => rebalance(Side::Sell, argmax(fc.point)),
        (0, true) => rebalance(Side::Buy, argmin(fc.point)),
        _ => return Err(Error::Invalid(format!("battery charge {charge} outside 0..=2"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub hour: usize,
    pub side: Side,
    pub limit: Option<f64>,
    pub price: f64,
    pub cash: f64,
    pub charge_after: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub cash: f64,
    pub charge: u8,
    pub fills: Vec<Fill>,
}

fn crosses(order: &Order, price: f64) -> bool {
    match (order.side, order.limit) {
        (_, None) => true,
        (Side::Sell, Some(l)) => price >= l,
        (Side::Buy, Some(u)) => price <= u,
    }
}

/// Executes a plan against realised prices in hour order.
pub fn settle_day(plan: &DayPlan, actual: &[f64], charge: u8, xi: f64) -> Result<Settlement> {
    for o in &plan.orders {
        if o.hour >= actual.len() {
            return Err(Error::Invalid(format!("order for hour {} beyond the day", o.hour)));
        }
    }
    let mut executing: Vec<&Order> = plan.orders.iter().filter(|o| crosses(o, actual[o.hour])).collect();
    if plan.all_or_none && executing.len() != plan.orders.len() {
        executing.retain(|o| o.limit.is_none());
    }
    executing.sort_by_key(|o| o.hour);
    let mut c = charge as i32;
    let mut cash = 0.0;
    let mut fills = Vec::with_capacity(executing.len());
    for o in executing {
        let price = actual[o.hour];
        let delta = match o.side {
            Side::Sell => {
                c -= 1;
                xi * price
            }
            Side::Buy => {
                c += 1;
                -price / xi
            }
        };
        if !(0..=CAPACITY as i32).contains(&c) {
            return Err(Error::Invalid(format!("plan drives the battery to {c} MWh")));
        }
        cash += delta;
        fills.push(Fill {
            hour: o.hour,
            side: o.side,
            limit: o.limit,
            price,
            cash: delta,
            charge_after: c as u8,
        });
    }
    Ok(Settlement {
        cash,
        charge: c as u8,
        fills,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub date: NaiveDate,
    pub fill: Fill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeLedger {
    pub entries: Vec<LedgerEntry>,
    /// Closing charge per day.
    pub trajectory: Vec<(NaiveDate, u8)>,
    pub total_profit: f64,
    pub trades: usize,
    pub profitable_limit_days: usize,
}

impl TradeLedger {
    pub fn per_transaction_profit(&self) -> f64 {
        if self.trades == 0 {
            0.0
        } else {
            self.total_profit / self.trades as f64
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["date", "hour", "side", "limit", "fill_price", "cash", "battery_after"])?;
        for e in &self.entries {
            let f = &e.fill;
            wtr.write_record(&[
                e.date.to_string(),
                f.hour.to_string(),
                f.side.to_string(),
                f.limit.map_or(String::new(), |l| format!("{l:.6}")),
                format!("{:.6}", f.price),
                format!("{:.6}", f.cash),
                f.charge_after.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<ledger output>", e))?;
        Ok(())
    }
}

/// One backtest day: forecasts and realised prices.
#[derive(Debug, Clone)]
pub struct TradingDay {
    pub date: NaiveDate,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub actual: Vec<f64>,
}

/// Assembles trading days from aligned forecasts at interval `level` (%).
pub fn trading_days(
    points: &[PointDay],
    quantiles: &[QuantileDay],
    actual: &crate::distribution::DailyPrices,
    level: u32,
) -> Result<Vec<TradingDay>> {
    if points.len() != quantiles.len() {
        return Err(Error::Invalid("point and quantile forecasts differ in length".into()));
    }
    let mut out = Vec::with_capacity(points.len());
    for (p, q) in points.iter().zip(quantiles) {
        if p.date != q.date {
            return Err(Error::MissingData(format!("forecast dates {} and {} misaligned", p.date, q.date)));
        }
        if let Some(prev) = out.last().map(|d: &TradingDay| d.date) {
            if (p.date - prev).num_days() != 1 {
                return Err(Error::MissingData(format!("forecast gap between {prev} and {}", p.date)));
            }
        }
        let y = actual
            .get(&p.date)
            .ok_or_else(|| Error::MissingData(format!("realised prices for {}", p.date)))?;
        let mut lower = Vec::with_capacity(HOURS);
        let mut upper = Vec::with_capacity(HOURS);
        for g in &q.hours {
            let (l, u) = interval(g, level)?;
            lower.push(l);
            upper.push(u);
        }
        out.push(TradingDay {
            date: p.date,
            point: p.values.to_vec(),
            lower,
            upper,
            actual: y.to_vec(),
        });
    }
    Ok(out)
}

fn run<F>(days: &[TradingDay], xi: f64, mut planner: F) -> Result<TradeLedger>
where
    F: FnMut(&TradingDay, u8, bool) -> Result<DayPlan>,
{
    if days.is_empty() {
        return Err(Error::Empty("trading period"));
    }
    let mut charge = INITIAL_CHARGE;
    let mut ledger = TradeLedger {
        entries: Vec::new(),
        trajectory: Vec::with_capacity(days.len()),
        total_profit: 0.0,
        trades: 0,
        profitable_limit_days: 0,
    };
    for (i, day) in days.iter().enumerate() {
        let plan = planner(day, charge, i + 1 == days.len())?;
        if plan.profitable {
            ledger.profitable_limit_days += 1;
        }
        let s = settle_day(&plan, &day.actual, charge, xi)?;
        charge = s.charge;
        ledger.total_profit += s.cash;
        ledger.trades += s.fills.len();
        ledger
            .entries
            .extend(s.fills.into_iter().map(|fill| LedgerEntry { date: day.date, fill }));
        ledger.trajectory.push((day.date, charge));
    }
    Ok(ledger)
}

/// Quantile-based limit-order strategy from one MWh of charge.
pub fn backtest(days: &[TradingDay], xi: f64) -> Result<TradeLedger> {
    run(days, xi, |d, c, last| {
        plan_day(
            &DayForecast {
                point: &d.point,
                lower: &d.lower,
                upper: &d.upper,
            },
            c,
            xi,
            last,
        )
    })
}

/// Reference strategy: buy at 03:00 and sell at 19:00 every day, unlimited.
pub fn backtest_fixed_hours(days: &[TradingDay], xi: f64) -> Result<TradeLedger> {
    run(days, xi, |_, _, _| {
        Ok(DayPlan {
            orders: vec![
                Order { hour: 3, side: Side::Buy, limit: None },
                Order { hour: 19, side: Side::Sell, limit: None },
            ],
            kind: PlanKind::Pair,
            condition: None,
            profitable: false,
            all_or_none: false,
        })
    })
}

/// Reference strategy: unlimited buy at the forecast minimum and sell at
/// the forecast maximum every day.
pub fn backtest_unlimited(days: &[TradingDay], xi: f64) -> Result<TradeLedger> {
    run(days, xi, |d, _, _| {
        let (hs, hb) = (argmax(&d.point), argmin(&d.point));
        let orders = if hs == hb {
            Vec::new()
        } else {
            vec![
                Order { hour: hb, side: Side::Buy, limit: None },
                Order { hour: hs, side: Side::Sell, limit: None },
            ]
        };
        Ok(DayPlan {
            orders,
            kind: PlanKind::Pair,
            condition: None,
            profitable: false,
            all_or_none: false,
        })
    })
}

/// Best cash for each opening/closing charge pair on one day with known
/// prices, over the trade sets the strategy can realise. `None` marks an
/// unreachable transition.
fn day_transitions(p: &[f64], xi: f64, final_day: bool) -> [[Option<f64>; 3]; 3] {
    let n = p.len();
    let sell = |h: usize| xi * p[h];
    let buy = |h: usize| -p[h] / xi;
    let mut t = [[None::<f64>; 3]; 3];
    let mut offer = |from: usize, to: usize, v: f64| {
        let slot = &mut t[from][to];
        if slot.is_none_or(|x| v > x) {
            *slot = Some(v);
        }
    };

    // opening charge 1: nothing, a pair in either order, or one leg
    offer(1, 1, 0.0);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                offer(1, 1, sell(a) + buy(b));
            }
        }
        if !final_day {
            offer(1, 0, sell(a));
            offer(1, 2, buy(a));
        }
    }

    for a in 0..n {
        // rebalancing from the margins with one unlimited order
        offer(2, 1, sell(a));
        offer(0, 1, buy(a));
    }
    if !final_day {
        for x in 0..n {
            for y in x + 1..n {
                // one unlimited order followed by the opposite leg
                offer(2, 2, sell(x) + buy(y));
                offer(0, 0, buy(x) + sell(y));
                offer(2, 0, sell(x) + sell(y));
                offer(0, 2, buy(x) + buy(y));
                for z in 0..n {
                    if z == x || z == y {
                        continue;
                    }
                    // x precedes y: a sell before the buy, or a buy before the sell
                    offer(2, 1, sell(x) + buy(y) + sell(z));
                    offer(0, 1, buy(x) + sell(y) + buy(z));
                }
            }
        }
    }
    t
}

/// Maximum total cash over the period with known prices, starting and
/// ending at one MWh.
pub fn perfect_foresight(actual: &[Vec<f64>], xi: f64) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::Empty("trading period"));
    }
    let mut value = [f64::NEG_INFINITY; 3];
    value[INITIAL_CHARGE as usize] = 0.0;
    for (i, p) in actual.iter().enumerate() {
        if p.len() < 2 || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("malformed price day {i}")));
        }
        let t = day_transitions(p, xi, i + 1 == actual.len());
        let mut next = [f64::NEG_INFINITY; 3];
        for from in 0..3 {
            if value[from] == f64::NEG_INFINITY {
                continue;
            }
            for to in 0..3 {
                if let Some(v) = t[from][to] {
                    next[to] = next[to].max(value[from] + v);
                }
            }
        }
        value = next;
    }
    Ok(value[INITIAL_CHARGE as usize])
}
