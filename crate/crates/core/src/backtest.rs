//! Return metrics, per-run decision statistics, seed aggregation and report
//! tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::Algorithm;
use crate::env::{ActionKind, TradeRecord};
use crate::error::{CrnError, Result};

/// Seeded runs aggregated per (coin, strategy) in a full experiment.
pub const RUNS_PER_CELL: usize = 5;

/// Tolerance for percentage shares that must sum to 100.
pub const SHARE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "CRN_PPO")]
    CrnPpo,
    #[serde(rename = "CRN_DDPG")]
    CrnDdpg,
    #[serde(rename = "BASE_PPO")]
    BasePpo,
    #[serde(rename = "BASE_DDPG")]
    BaseDdpg,
    #[serde(rename = "BUY_AND_HOLD")]
    BuyAndHold,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::CrnPpo,
        Strategy::CrnDdpg,
        Strategy::BasePpo,
        Strategy::BaseDdpg,
        Strategy::BuyAndHold,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Strategy::CrnPpo => "CRN_PPO",
            Strategy::CrnDdpg => "CRN_DDPG",
            Strategy::BasePpo => "BASE_PPO",
            Strategy::BaseDdpg => "BASE_DDPG",
            Strategy::BuyAndHold => "BUY_AND_HOLD",
        }
    }

    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            Strategy::CrnPpo | Strategy::BasePpo => Some(Algorithm::Ppo),
            Strategy::CrnDdpg | Strategy::BaseDdpg => Some(Algorithm::Ddpg),
            Strategy::BuyAndHold => None,
        }
    }

    /// Whether the agent observes the direction forecasts.
    pub fn uses_forecasts(self) -> bool {
        matches!(self, Strategy::CrnPpo | Strategy::CrnDdpg)
    }

    pub fn is_seeded(self) -> bool {
        self != Strategy::BuyAndHold
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Strategy {
    type Err = CrnError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CrnError::Config(format!("unknown strategy `{s}`")))
    }
}

pub fn roi(initial: f64, final_value: f64) -> Result<f64> {
    if !(initial > 0.0) {
        return Err(CrnError::Contract(format!("initial value must be positive, got {initial}")));
    }
    Ok((final_value - initial) / initial)
}

/// Linear annualisation over a period of `days`.
pub fn annual_roi(roi: f64, days: usize) -> Result<f64> {
    if days == 0 {
        return Err(CrnError::Contract("annualisation needs at least one day".into()));
    }
    if days == 365 {
        return Ok(roi);
    }
    Ok(roi * 365.0 / days as f64)
}

/// Shares of actions, average executed sizes and forecast directions for
/// one trade log, all in percent. Sizes are `None` when no trade of that
/// kind happened; forecast shares are `None` when the log has no forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionStats {
    pub buy_pct: f64,
    pub sell_pct: f64,
    pub hold_pct: f64,
    pub avg_buy_size: Option<f64>,
    pub avg_sell_size: Option<f64>,
    pub up_pct: Option<f64>,
    pub down_pct: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn decision_stats(log: &[TradeRecord]) -> Result<DecisionStats> {
    if log.is_empty() {
        return Err(CrnError::Contract("decision statistics need a nonempty trade log".into()));
    }
    let n = log.len() as f64;
    let share = |k: ActionKind| 100.0 * log.iter().filter(|r| r.kind == k).count() as f64 / n;
    let size = |k: ActionKind| mean_of(log.iter().filter(|r| r.kind == k).map(|r| 100.0 * r.fraction));
    let forecasts: Vec<f64> = log.iter().filter_map(|r| r.p_up).collect();
    let up_pct = if forecasts.is_empty() {
        None
    } else {
        // p_down = 1 - p_up, so Up means p_up > 0.5.
        Some(100.0 * forecasts.iter().filter(|p| **p > 0.5).count() as f64 / forecasts.len() as f64)
    };
    Ok(DecisionStats {
        buy_pct: share(ActionKind::Buy),
        sell_pct: share(ActionKind::Sell),
        hold_pct: share(ActionKind::Hold),
        avg_buy_size: size(ActionKind::Buy),
        avg_sell_size: size(ActionKind::Sell),
        up_pct,
        down_pct: up_pct.map(|u| 100.0 - u),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub coin: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub roi: f64,
    pub annual_roi: f64,
    pub test_days: usize,
    pub final_value: f64,
    /// File name of the persisted trade log, when one was written.
    pub trade_log: Option<String>,
    pub decisions: DecisionStats,
}

impl RunResult {
    /// Builds a result from a finished episode's trade log.
    pub fn from_log(coin: &str, strategy: Strategy, seed: u64, initial_cash: f64, test_days: usize, log: &[TradeRecord]) -> Result<Self> {
        let final_value = log
            .last()
            .ok_or_else(|| CrnError::Contract("empty trade log".into()))?
            .value;
        let r = roi(initial_cash, final_value)?;
        Ok(RunResult {
            coin: coin.to_string(),
            strategy,
            seed,
            roi: r,
            annual_roi: annual_roi(r, test_days)?,
            test_days,
            final_value,
            trade_log: None,
            decisions: decision_stats(log)?,
        })
    }
}

/// Buys the whole balance at the first close and sells everything at the
/// last, paying `fee_rate` on each leg. Returns the one-row-per-day log.
pub fn buy_and_hold_log(dates: &[chrono::NaiveDate], closes: &[f64], initial_cash: f64, fee_rate: f64) -> Result<Vec<TradeRecord>> {
    if closes.len() < 2 || dates.len() != closes.len() {
        return Err(CrnError::InsufficientData("buy-and-hold needs at least two aligned closes".into()));
    }
    if !(fee_rate >= 0.0 && fee_rate < 1.0) {
        return Err(CrnError::Config(format!("fee rate must lie in [0, 1), got {fee_rate}")));
    }
    // Spend s with s(1 + fee) = cash so the balance never goes negative.
    let spend = initial_cash / (1.0 + fee_rate);
    let coins = spend / closes[0];
    let n = closes.len();
    let mut log = Vec::with_capacity(n - 1);
    for t in 0..n - 1 {
        let next = closes[t + 1];
        let (kind, fraction, tc, cash, held) = if t == 0 {
            (ActionKind::Buy, 1.0, spend * fee_rate, 0.0, coins)
        } else {
            (ActionKind::Hold, 0.0, 0.0, 0.0, coins)
        };
        let mut value = held * next + cash;
        let mut tc = tc;
        if t + 2 == n {
            let proceeds = held * next;
            tc += proceeds * fee_rate;
            value = proceeds * (1.0 - fee_rate);
        }
        log.push(TradeRecord {
            date: dates[t],
            kind,
            fraction,
            tc,
            cash,
            coins: held,
            value,
            p_up: None,
            reward: 0.0,
        });
    }
    Ok(log)
}

pub fn buy_and_hold(coin: &str, dates: &[chrono::NaiveDate], closes: &[f64], initial_cash: f64, fee_rate: f64) -> Result<RunResult> {
    let log = buy_and_hold_log(dates, closes, initial_cash, fee_rate)?;
    RunResult::from_log(coin, Strategy::BuyAndHold, 0, initial_cash, closes.len(), &log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and sample (n - 1) standard deviation; a single value has std 0.
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 || xs.iter().all(|x| *x == xs[0]) {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

/// Seed-averaged metrics for one (coin, strategy). Return figures are
/// fractions; decision figures are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub coin: String,
    pub strategy: Strategy,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub roi: MeanStd,
    pub annual_roi: MeanStd,
    pub buy_pct: f64,
    pub sell_pct: f64,
    pub hold_pct: f64,
    pub avg_buy_size: Option<f64>,
    pub avg_sell_size: Option<f64>,
    pub up_pct: Option<f64>,
    pub down_pct: Option<f64>,
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    mean_of(xs.flatten())
}

/// Aggregates any positive number of runs of one (coin, strategy).
pub fn aggregate_results(results: &[RunResult]) -> Result<Aggregate> {
    let first = results
        .first()
        .ok_or_else(|| CrnError::Contract("no runs to aggregate".into()))?;
    if results.iter().any(|r| r.coin != first.coin || r.strategy != first.strategy) {
        return Err(CrnError::Contract("runs mix coins or strategies".into()));
    }
    let pick = |f: fn(&RunResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    let d = |f: fn(&DecisionStats) -> f64| mean_of(results.iter().map(|r| f(&r.decisions))).expect("nonempty");
    Ok(Aggregate {
        coin: first.coin.clone(),
        strategy: first.strategy,
        runs: results.len(),
        seeds: results.iter().map(|r| r.seed).collect(),
        roi: MeanStd::of(&pick(|r| r.roi)).expect("nonempty"),
        annual_roi: MeanStd::of(&pick(|r| r.annual_roi)).expect("nonempty"),
        buy_pct: d(|s| s.buy_pct),
        sell_pct: d(|s| s.sell_pct),
        hold_pct: d(|s| s.hold_pct),
        avg_buy_size: mean_opt(results.iter().map(|r| r.decisions.avg_buy_size)),
        avg_sell_size: mean_opt(results.iter().map(|r| r.decisions.avg_sell_size)),
        up_pct: mean_opt(results.iter().map(|r| r.decisions.up_pct)),
        down_pct: mean_opt(results.iter().map(|r| r.decisions.down_pct)),
    })
}

/// Aggregates exactly [`RUNS_PER_CELL`] seeded runs.
pub fn aggregate_runs(results: &[RunResult]) -> Result<Aggregate> {
    if results.len() != RUNS_PER_CELL {
        return Err(CrnError::Contract(format!(
            "expected {RUNS_PER_CELL} runs per coin and strategy, got {}",
            results.len()
        )));
    }
    aggregate_results(results)
}

/// Groups runs by (coin, strategy) and aggregates each group.
pub fn aggregate_all(results: &[RunResult]) -> Result<Vec<Aggregate>> {
    let mut groups: BTreeMap<(String, Strategy), Vec<RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.coin.clone(), r.strategy)).or_default().push(r.clone());
    }
    groups.values().map(|g| aggregate_results(g)).collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn mean_std_pct(m: &MeanStd) -> String {
    format!("{} ({})", pct(m.mean), pct(m.std))
}

fn opt2(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CrnError::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header, &mut out);
    let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in rows {
        line(r, &mut out);
    }
    out
}

/// Mean over coins of each strategy's mean ROI and annual ROI.
fn strategy_averages(aggs: &[Aggregate]) -> BTreeMap<Strategy, (f64, f64)> {
    let mut acc: BTreeMap<Strategy, Vec<(f64, f64)>> = BTreeMap::new();
    for a in aggs {
        acc.entry(a.strategy).or_default().push((a.roi.mean, a.annual_roi.mean));
    }
    acc.into_iter()
        .map(|(s, v)| {
            let n = v.len() as f64;
            (s, (v.iter().map(|x| x.0).sum::<f64>() / n, v.iter().map(|x| x.1).sum::<f64>() / n))
        })
        .collect()
}

const ROI_HEADER: [&str; 4] = ["coin", "strategy", "roi_pct", "annual_roi_pct"];
const DECISION_HEADER: [&str; 9] = ["coin", "strategy", "buy_pct", "sell_pct", "hold_pct", "avg_buy_size_pct", "avg_sell_size_pct", "up_pct", "down_pct"];

/// Long-format return table, one row per (coin, strategy) with
/// "mean (std)" cells, followed by one average row per strategy.
pub fn roi_table_csv(aggs: &[Aggregate]) -> Result<String> {
    let mut rows: Vec<Vec<String>> = aggs
        .iter()
        .map(|a| vec![a.coin.clone(), a.strategy.id().into(), mean_std_pct(&a.roi), mean_std_pct(&a.annual_roi)])
        .collect();
    for (s, (r, ar)) in strategy_averages(aggs) {
        rows.push(vec!["Average".into(), s.id().into(), pct(r), pct(ar)]);
    }
    csv_string(&ROI_HEADER, &rows)
}

fn decision_row(a: &Aggregate) -> Vec<String> {
    vec![
        a.coin.clone(),
        a.strategy.id().into(),
        format!("{:.2}", a.buy_pct),
        format!("{:.2}", a.sell_pct),
        format!("{:.2}", a.hold_pct),
        opt2(a.avg_buy_size),
        opt2(a.avg_sell_size),
        opt2(a.up_pct),
        opt2(a.down_pct),
    ]
}

pub fn decisions_table_csv(aggs: &[Aggregate]) -> Result<String> {
    let rows: Vec<Vec<String>> = aggs.iter().filter(|a| a.strategy.is_seeded()).map(decision_row).collect();
    csv_string(&DECISION_HEADER, &rows)
}

/// Wide return table: coins down the side, an ROI and annual ROI column
/// pair per strategy, and an average row.
pub fn roi_table_text(aggs: &[Aggregate]) -> String {
    let strategies: Vec<Strategy> = Strategy::ALL.into_iter().filter(|s| aggs.iter().any(|a| a.strategy == *s)).collect();
    let coins: Vec<String> = {
        let mut c: Vec<String> = aggs.iter().map(|a| a.coin.clone()).collect();
        c.dedup();
        c
    };
    let mut header = vec!["coin".to_string()];
    for s in &strategies {
        header.push(format!("{s} ROI"));
        header.push(format!("{s} Ann.ROI"));
    }
    let mut rows = Vec::new();
    for coin in &coins {
        let mut row = vec![coin.clone()];
        for s in &strategies {
            match aggs.iter().find(|a| &a.coin == coin && a.strategy == *s) {
                Some(a) if a.runs > 1 => {
                    row.push(mean_std_pct(&a.roi));
                    row.push(mean_std_pct(&a.annual_roi));
                }
                Some(a) => {
                    row.push(pct(a.roi.mean));
                    row.push(pct(a.annual_roi.mean));
                }
                None => row.extend(["-".to_string(), "-".to_string()]),
            }
        }
        rows.push(row);
    }
    if !rows.is_empty() {
        let avgs = strategy_averages(aggs);
        let mut row = vec!["Average".to_string()];
        for s in &strategies {
            let (r, ar) = avgs[s];
            row.push(pct(r));
            row.push(pct(ar));
        }
        rows.push(row);
    }
    aligned(&header, &rows)
}

pub fn decisions_table_text(aggs: &[Aggregate]) -> String {
    let header: Vec<String> = ["coin", "strategy", "Buy%", "Sell%", "Hold%", "BuySize%", "SellSize%", "Up%", "Down%"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = aggs.iter().filter(|a| a.strategy.is_seeded()).map(decision_row).collect();
    aligned(&header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub aggregates: Vec<Aggregate>,
    /// Per strategy: mean over coins of (ROI, annual ROI).
    pub averages: BTreeMap<Strategy, (f64, f64)>,
}

impl Report {
    pub fn new(config_hash: impl Into<String>, aggregates: Vec<Aggregate>) -> Self {
        let averages = strategy_averages(&aggregates);
        Report {
            config_hash: config_hash.into(),
            aggregates,
            averages,
        }
    }
}

pub const REPORT_FILES: [&str; 5] = ["report.json", "roi_table.csv", "roi_table.txt", "decisions_table.csv", "decisions_table.txt"];

/// Writes the report files into `dir`. Their contents depend only on the
/// report; timestamps belong in a separate metadata file.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CrnError::io(dir, e))?;
    let files = [
        serde_json::to_string_pretty(report)?,
        roi_table_csv(&report.aggregates)?,
        roi_table_text(&report.aggregates),
        decisions_table_csv(&report.aggregates)?,
        decisions_table_text(&report.aggregates),
    ];
    for (name, body) in REPORT_FILES.iter().zip(files) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| CrnError::io(&path, e))?;
    }
    Ok(())
}
