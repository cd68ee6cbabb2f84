//! Trading environment: position sizing with fees, observations, and the
//! stepped ROI/Sharpe reward.

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrnError, Result};
use crate::pgm::DirectionPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Smallest position size the agent may choose.
    pub lower: f64,
    /// Largest position size the agent may choose.
    pub upper: f64,
    /// Position size forced by a strong matching prediction.
    pub strong_fraction: f64,
    /// Posterior at or above which a prediction counts as strong.
    pub strong_cutoff: f64,
    pub fee_rate: f64,
    pub risk_free_annual: f64,
    pub roi_weight: f64,
    pub sr_weight: f64,
    /// Number of trailing daily returns in the Sharpe estimate.
    pub sharpe_window: usize,
    pub initial_cash: f64,
    /// Symmetric bound on z-scored features; `None` disables clipping.
    pub obs_clip: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            lower: 0.40,
            upper: 0.60,
            strong_fraction: 0.75,
            strong_cutoff: 0.80,
            fee_rate: 0.001,
            risk_free_annual: 0.034,
            roi_weight: 0.7,
            sr_weight: 0.3,
            sharpe_window: 30,
            initial_cash: 10_000.0,
            obs_clip: Some(5.0),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CrnError::Config(m.to_string()));
        if !(0.0 < self.lower && self.lower <= self.upper && self.upper < self.strong_fraction && self.strong_fraction <= 1.0) {
            return bad("position sizes must satisfy 0 < lower <= upper < strong fraction <= 1");
        }
        if !(self.strong_cutoff > 0.5 && self.strong_cutoff <= 1.0) {
            return bad("strong-signal cutoff must lie in (0.5, 1]");
        }
        if !(0.0..1.0).contains(&self.fee_rate) {
            return bad("fee rate must lie in [0, 1)");
        }
        if self.sharpe_window < 2 {
            return bad("Sharpe window must hold at least 2 returns");
        }
        if !(self.initial_cash > 0.0 && self.initial_cash.is_finite()) {
            return bad("initial cash must be positive");
        }
        if self.obs_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("observation clip must be positive");
        }
        Ok(())
    }

    pub fn daily_risk_free(&self) -> f64 {
        self.risk_free_annual / 365.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Buy,
    Sell,
    Hold,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Buy => "Buy",
            ActionKind::Sell => "Sell",
            ActionKind::Hold => "Hold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub kind: ActionKind,
    pub fraction: f64,
}

impl ActionCommand {
    pub fn hold() -> Self {
        ActionCommand {
            kind: ActionKind::Hold,
            fraction: 0.0,
        }
    }
}

/// Maps two channels in `[-1, 1]` to a command: the first picks the kind by
/// thirds, the second the position size within `[lower, upper]`.
pub fn decode_action(raw: [f64; 2], cfg: &EnvConfig) -> ActionCommand {
    let clip = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    let (a1, a2) = (clip(raw[0]), clip(raw[1]));
    let kind = if a1 < -1.0 / 3.0 {
        ActionKind::Sell
    } else if a1 > 1.0 / 3.0 {
        ActionKind::Buy
    } else {
        ActionKind::Hold
    };
    ActionCommand {
        kind,
        fraction: cfg.lower + (a2 + 1.0) / 2.0 * (cfg.upper - cfg.lower),
    }
}

/// Cash `B` and coin holdings `WA`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub cash: f64,
    pub coins: f64,
}

impl Portfolio {
    pub fn value(&self, price: f64) -> f64 {
        self.cash + self.coins * price
    }
}

/// Result of executing one command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub portfolio: Portfolio,
    pub kind: ActionKind,
    /// Fraction actually applied (0 for Hold).
    pub fraction: f64,
    pub tc: f64,
}

/// Executes a command at `price`. A Buy (Sell) backed by a prediction whose
/// Up (Down) probability reaches the strong cutoff trades the strong
/// fraction; otherwise the fraction is clamped to `[lower, upper]`. Fees are
/// charged on the traded notional.
pub fn apply_action(
    portfolio: Portfolio,
    action: ActionCommand,
    prediction: Option<&DirectionPrediction>,
    price: f64,
    cfg: &EnvConfig,
) -> Result<Execution> {
    if !(price > 0.0 && price.is_finite()) {
        return Err(CrnError::Contract(format!("execution price must be positive, got {price}")));
    }
    if !(0.0..1.0).contains(&cfg.fee_rate) {
        return Err(CrnError::Config("fee rate must lie in [0, 1)".into()));
    }
    let sized = |strong_p: Option<f64>| {
        if strong_p.is_some_and(|p| p >= cfg.strong_cutoff) {
            cfg.strong_fraction
        } else if action.fraction.is_nan() {
            cfg.lower
        } else {
            action.fraction.clamp(cfg.lower, cfg.upper)
        }
    };
    let Portfolio { cash, coins } = portfolio;
    let exec = match action.kind {
        ActionKind::Hold => Execution {
            portfolio,
            kind: ActionKind::Hold,
            fraction: 0.0,
            tc: 0.0,
        },
        ActionKind::Sell => {
            let f = sized(prediction.map(|p| p.p_down));
            let sold = coins * f;
            let proceeds = sold * price;
            let tc = proceeds * cfg.fee_rate;
            Execution {
                portfolio: Portfolio {
                    cash: cash + proceeds - tc,
                    coins: coins * (1.0 - f),
                },
                kind: ActionKind::Sell,
                fraction: f,
                tc,
            }
        }
        ActionKind::Buy => {
            let f = sized(prediction.map(|p| p.p_up));
            let mut spend = cash * f;
            let mut tc = spend * cfg.fee_rate;
            if cash - spend - tc < 0.0 {
                spend = cash / (1.0 + cfg.fee_rate);
                tc = cash - spend;
            }
            Execution {
                portfolio: Portfolio {
                    cash: (cash - spend - tc).max(0.0),
                    coins: coins + spend / price,
                },
                kind: ActionKind::Buy,
                fraction: f,
                tc,
            }
        }
    };
    Ok(exec)
}

/// Sharpe ratio of the trailing `window` daily returns of `values`, in excess
/// of the daily risk-free rate. Population standard deviation; degenerate
/// windows (fewer than two returns or zero spread) give 0.
pub fn compute_sharpe(values: &[f64], cfg: &EnvConfig) -> f64 {
    let from = values.len().saturating_sub(cfg.sharpe_window + 1);
    let returns: Vec<f64> = values[from..]
        .windows(2)
        .filter(|w| w[0] != 0.0)
        .map(|w| w[1] / w[0] - 1.0)
        .collect();
    if returns.len() < 2 {
        return 0.0;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= 1e-12) {
        return 0.0;
    }
    (mean - cfg.daily_risk_free()) / std
}

/// Piecewise Sharpe reward. Rows are checked top-down, first match wins,
/// except that an exact zero is matched by its own row first.
pub fn reward_sr(s: f64) -> i32 {
    if s == 0.0 {
        0
    } else if s >= 4.0 {
        10
    } else if s >= 1.0 {
        4
    } else if s >= 0.0 {
        1
    } else if s >= -1.0 {
        -1
    } else if s >= -4.0 {
        -4
    } else {
        -10
    }
}

/// Piecewise ROI reward, first match top-down. ROI in `(0, 0.1)` earns 0.
pub fn reward_roi(roi: f64) -> i32 {
    if roi >= 0.5 {
        10
    } else if roi >= 0.2 {
        4
    } else if roi >= 0.1 {
        1
    } else if roi >= 0.0 {
        0
    } else if roi >= -0.2 {
        -4
    } else {
        -10
    }
}

pub fn combined_reward(roi: f64, sharpe: f64, cfg: &EnvConfig) -> f64 {
    cfg.roi_weight * f64::from(reward_roi(roi)) + cfg.sr_weight * f64::from(reward_sr(sharpe))
}

/// Per-feature z-scoring with statistics from the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(rows: &[Vec<f64>], names: &[String]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(CrnError::InsufficientData("no rows to fit feature scaling".into()));
        };
        let w = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; w];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; w];
        for r in rows {
            for ((s, x), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        for (j, s) in std.iter_mut().enumerate() {
            *s = s.sqrt();
            if !(*s > 1e-12) {
                log::warn!(
                    "feature `{}` is constant on the training rows; it is passed as 0",
                    names.get(j).map_or("?", String::as_str)
                );
                *s = 0.0;
            }
        }
        Ok(Normalizer { mean, std })
    }

    pub fn transform(&self, row: &[f64], clip: Option<f64>) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| {
                let z = if *s > 0.0 { (x - m) / s } else { 0.0 };
                clip.map_or(z, |c| z.clamp(-c, c))
            })
            .collect()
    }
}

/// Observation vector: scaled features, then `[p_up, p_down]` when a
/// prediction is supplied, then cash and holdings as fractions of value.
pub fn build_observation(
    scaled_features: &[f64],
    prediction: Option<&DirectionPrediction>,
    portfolio: &Portfolio,
    price: f64,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(scaled_features.len() + 4);
    obs.extend_from_slice(scaled_features);
    if let Some(p) = prediction {
        obs.push(p.p_up);
        obs.push(p.p_down);
    }
    let value = portfolio.value(price);
    if value > 0.0 {
        obs.push(portfolio.cash / value);
        obs.push(portfolio.coins * price / value);
    } else {
        obs.extend([0.0, 0.0]);
    }
    obs
}

/// Market rows an environment runs over. `features` holds raw feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    /// Direction forecasts per row, for agents that observe them.
    pub predictions: Option<Vec<Option<DirectionPrediction>>>,
}

impl MarketSeries {
    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.dates.len() != n || self.features.len() != n {
            return Err(CrnError::Shape("series columns have different lengths".into()));
        }
        if self.predictions.as_ref().is_some_and(|p| p.len() != n) {
            return Err(CrnError::Shape("prediction column length differs from the series".into()));
        }
        let w = self.feature_names.len();
        if self.features.iter().any(|r| r.len() != w) {
            return Err(CrnError::Shape("feature row width differs from feature names".into()));
        }
        if self.closes.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(CrnError::Contract("closes must be positive and finite".into()));
        }
        Ok(())
    }

    /// Observation width for this series.
    pub fn obs_dim(&self) -> usize {
        self.feature_names.len() + if self.predictions.is_some() { 2 } else { 0 } + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub kind: ActionKind,
    pub fraction: f64,
    pub tc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One row of the trade log. Balances are after the action; `value` is
/// marked at the next close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub date: NaiveDate,
    pub kind: ActionKind,
    pub fraction: f64,
    pub tc: f64,
    pub cash: f64,
    pub coins: f64,
    pub value: f64,
    pub p_up: Option<f64>,
    pub reward: f64,
}

pub fn write_trade_log(path: &Path, records: &[TradeRecord]) -> Result<()> {
    std::fs::write(path, trade_log_csv(records)?).map_err(|e| CrnError::io(path, e))
}

pub fn trade_log_csv(records: &[TradeRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "kind", "fraction", "tc", "B", "WA", "value", "p_up", "reward"])?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            r.kind.as_str().to_string(),
            r.fraction.to_string(),
            r.tc.to_string(),
            r.cash.to_string(),
            r.coins.to_string(),
            r.value.to_string(),
            r.p_up.map_or(String::new(), |p| p.to_string()),
            r.reward.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CrnError::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// An episode over rows `start..end` of a series: the agent acts at each
/// close, the episode ends on the last row, where holdings are sold.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    cfg: EnvConfig,
    series: Arc<MarketSeries>,
    scaler: Arc<Normalizer>,
    bounds: (usize, usize),
    sampler: Option<(usize, ChaCha8Rng)>,
    start: usize,
    end: usize,
    t: usize,
    portfolio: Portfolio,
    values: Vec<f64>,
    done: bool,
    log: Vec<TradeRecord>,
}

impl TradingEnv {
    pub fn new(cfg: EnvConfig, series: Arc<MarketSeries>, scaler: Arc<Normalizer>, start: usize, end: usize) -> Result<Self> {
        cfg.validate()?;
        series.validate()?;
        if end > series.len() || start + 2 > end {
            return Err(CrnError::InsufficientData(format!(
                "episode rows {start}..{end} need at least two rows inside a series of {}",
                series.len()
            )));
        }
        if scaler.mean.len() != series.feature_names.len() {
            return Err(CrnError::Shape("scaler width differs from the feature width".into()));
        }
        if let Some(preds) = &series.predictions {
            if preds[start..end].iter().any(Option::is_none) {
                return Err(CrnError::MissingData(format!("episode rows {start}..{end} lack direction forecasts")));
            }
        }
        let mut env = TradingEnv {
            cfg,
            series,
            scaler,
            bounds: (start, end),
            sampler: None,
            start,
            end,
            t: start,
            portfolio: Portfolio {
                cash: cfg.initial_cash,
                coins: 0.0,
            },
            values: Vec::new(),
            done: false,
            log: Vec::new(),
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn series(&self) -> &MarketSeries {
        &self.series
    }

    pub fn obs_dim(&self) -> usize {
        self.series.obs_dim()
    }

    /// Number of steps in a full episode.
    pub fn episode_len(&self) -> usize {
        self.end - self.start - 1
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn portfolio(&self) -> Portfolio {
        self.portfolio
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trade_log(&self) -> &[TradeRecord] {
        &self.log
    }

    pub fn take_trade_log(&mut self) -> Vec<TradeRecord> {
        std::mem::take(&mut self.log)
    }

    /// From now on each reset starts a `window`-row episode at a seeded
    /// random offset inside the rows given at construction.
    pub fn sample_windows(&mut self, window: usize, seed: u64) -> Result<()> {
        if window < 2 {
            return Err(CrnError::Config("training windows need at least two rows".into()));
        }
        self.sampler = Some((window, ChaCha8Rng::seed_from_u64(seed)));
        Ok(())
    }

    /// Returns to full-length episodes over the construction rows.
    pub fn full_episodes(&mut self) {
        self.sampler = None;
        (self.start, self.end) = self.bounds;
    }

    pub fn reset(&mut self) -> Vec<f64> {
        let (lo, hi) = self.bounds;
        if let Some((window, rng)) = &mut self.sampler {
            let len = (*window).min(hi - lo);
            self.start = rng.random_range(lo..=hi - len);
            self.end = self.start + len;
        }
        self.t = self.start;
        self.portfolio = Portfolio {
            cash: self.cfg.initial_cash,
            coins: 0.0,
        };
        self.values = vec![self.cfg.initial_cash];
        self.done = false;
        self.log.clear();
        self.observation()
    }

    fn prediction(&self, t: usize) -> Option<&DirectionPrediction> {
        self.series.predictions.as_ref().and_then(|p| p[t].as_ref())
    }

    pub fn observation(&self) -> Vec<f64> {
        let scaled = self.scaler.transform(&self.series.features[self.t], self.cfg.obs_clip);
        build_observation(&scaled, self.prediction(self.t), &self.portfolio, self.series.closes[self.t])
    }

    /// Decodes a raw two-channel action and steps.
    pub fn step(&mut self, raw: [f64; 2]) -> Result<StepResult> {
        let cmd = decode_action(raw, &self.cfg);
        self.step_command(cmd)
    }

    pub fn step_command(&mut self, cmd: ActionCommand) -> Result<StepResult> {
        if self.done {
            return Err(CrnError::Contract("step called on a finished episode".into()));
        }
        let t = self.t;
        let pred = self.prediction(t).copied();
        let exec = apply_action(self.portfolio, cmd, pred.as_ref(), self.series.closes[t], &self.cfg)?;
        let mut tc = exec.tc;
        let mut portfolio = exec.portfolio;
        self.t += 1;
        let price = self.series.closes[self.t];
        if self.t + 1 == self.end {
            let proceeds = portfolio.coins * price;
            let fee = proceeds * self.cfg.fee_rate;
            portfolio.cash += proceeds - fee;
            portfolio.coins = 0.0;
            tc += fee;
            self.done = true;
        }
        self.portfolio = portfolio;
        let value = portfolio.value(price);
        self.values.push(value);
        let roi = (value - self.values[0]) / self.values[0];
        let reward = combined_reward(roi, compute_sharpe(&self.values, &self.cfg), &self.cfg);
        self.log.push(TradeRecord {
            date: self.series.dates[t],
            kind: exec.kind,
            fraction: exec.fraction,
            tc,
            cash: exec.portfolio.cash,
            coins: exec.portfolio.coins,
            value,
            p_up: pred.map(|p| p.p_up),
            reward,
        });
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                kind: exec.kind,
                fraction: exec.fraction,
                tc,
            },
        })
    }

    /// Return on the initial cash so far.
    pub fn roi(&self) -> f64 {
        let last = *self.values.last().expect("values start with the initial cash");
        (last - self.values[0]) / self.values[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    fn pred(p_up: f64) -> DirectionPrediction {
        DirectionPrediction { p_up, p_down: 1.0 - p_up }
    }

    #[test]
    fn strong_buy_signal() {
        let p = Portfolio { cash: 1000.0, coins: 0.0 };
        let cmd = ActionCommand { kind: ActionKind::Buy, fraction: 0.5 };
        let e = apply_action(p, cmd, Some(&pred(0.85)), 10.0, &cfg()).unwrap();
        assert_eq!(e.fraction, 0.75);
        assert!((e.tc - 0.75).abs() < 1e-12);
        assert!((e.portfolio.cash - 249.25).abs() < 1e-9);
        assert!((e.portfolio.coins - 75.0).abs() < 1e-12);
    }

    #[test]
    fn strong_sell_signal() {
        let p = Portfolio { cash: 0.0, coins: 10.0 };
        let cmd = ActionCommand { kind: ActionKind::Sell, fraction: 0.4 };
        let e = apply_action(p, cmd, Some(&pred(0.15)), 100.0, &cfg()).unwrap();
        assert!((e.portfolio.coins - 2.5).abs() < 1e-12);
        assert!((e.portfolio.cash - 749.25).abs() < 1e-9);
        assert!((e.tc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hold_changes_nothing() {
        let p = Portfolio { cash: 3.0, coins: 4.0 };
        let e = apply_action(p, ActionCommand::hold(), Some(&pred(0.99)), 7.0, &cfg()).unwrap();
        assert_eq!(e.portfolio, p);
        assert_eq!(e.tc, 0.0);
    }

    #[test]
    fn override_needs_matching_direction_and_cutoff() {
        let p = Portfolio { cash: 1000.0, coins: 10.0 };
        let buy = ActionCommand { kind: ActionKind::Buy, fraction: 0.9 };
        assert_eq!(apply_action(p, buy, Some(&pred(0.1)), 1.0, &cfg()).unwrap().fraction, 0.6);
        assert_eq!(apply_action(p, buy, Some(&pred(0.8)), 1.0, &cfg()).unwrap().fraction, 0.75);
        assert_eq!(apply_action(p, buy, None, 1.0, &cfg()).unwrap().fraction, 0.6);
        let sell = ActionCommand { kind: ActionKind::Sell, fraction: 0.1 };
        assert_eq!(apply_action(p, sell, Some(&pred(0.9)), 1.0, &cfg()).unwrap().fraction, 0.4);
    }

    #[test]
    fn oversized_buy_is_scaled_to_zero_cash() {
        let c = EnvConfig { strong_fraction: 1.0, ..cfg() };
        let p = Portfolio { cash: 100.0, coins: 0.0 };
        let buy = ActionCommand { kind: ActionKind::Buy, fraction: 0.5 };
        let e = apply_action(p, buy, Some(&pred(0.95)), 2.0, &c).unwrap();
        assert!(e.portfolio.cash >= 0.0 && e.portfolio.cash < 1e-12);
        assert!((e.portfolio.coins * 2.0 + e.tc - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bad_price_or_fee_is_rejected() {
        let p = Portfolio { cash: 1.0, coins: 1.0 };
        assert!(apply_action(p, ActionCommand::hold(), None, 0.0, &cfg()).is_err());
        let c = EnvConfig { fee_rate: 1.5, ..cfg() };
        assert!(apply_action(p, ActionCommand::hold(), None, 1.0, &c).is_err());
    }

    #[test]
    fn decode_examples() {
        let c = cfg();
        assert_eq!(decode_action([0.0, 0.7], &c).kind, ActionKind::Hold);
        let b = decode_action([1.0, 1.0], &c);
        assert_eq!(b.kind, ActionKind::Buy);
        assert!((b.fraction - 0.6).abs() < 1e-12);
        let s = decode_action([-1.0, -1.0], &c);
        assert_eq!(s.kind, ActionKind::Sell);
        assert!((s.fraction - 0.4).abs() < 1e-12);
        assert_eq!(decode_action([5.0, 9.0], &c), b);
    }

    #[test]
    fn reward_tables() {
        let sr: Vec<i32> = [-5.0, -4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 5.0].map(reward_sr).to_vec();
        assert_eq!(sr, vec![-10, -4, -4, -1, -1, 0, 1, 4, 4, 10, 10]);
        let roi: Vec<i32> = [-0.3, -0.2, -0.1, 0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.6].map(reward_roi).to_vec();
        assert_eq!(roi, vec![-10, -4, -4, 0, 0, 1, 1, 4, 4, 10, 10]);
        let c = cfg();
        assert!((combined_reward(0.15, 2.0, &c) - 1.9).abs() < 1e-12);
        assert_eq!(combined_reward(0.0, 0.0, &c), 0.0);
        assert!((combined_reward(0.6, 5.0, &c) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn sharpe_examples() {
        let c = cfg();
        assert_eq!(compute_sharpe(&[100.0; 40], &c), 0.0);
        let growth: Vec<f64> = (0..40).map(|i| 100.0 * 1.01f64.powi(i)).collect();
        assert_eq!(compute_sharpe(&growth, &c), 0.0);
        let mut zig = vec![100.0];
        for i in 0..40 {
            let last = *zig.last().unwrap();
            zig.push(last * if i % 2 == 0 { 1.01 } else { 0.99 });
        }
        let s = compute_sharpe(&zig, &c);
        assert!(s < 0.0);
        // Mean of the 30 returns is exactly 0, std is 0.01.
        assert!((s + c.daily_risk_free() / 0.01).abs() < 1e-9, "{s}");
        assert_eq!(compute_sharpe(&[100.0, 101.0], &c), 0.0);
    }

    #[test]
    fn observation_layout() {
        let p = Portfolio { cash: 500.0, coins: 0.0 };
        let obs = build_observation(&[0.0; 5], Some(&pred(0.7)), &p, 10.0);
        assert_eq!(obs.len(), 9);
        assert_eq!(&obs[5..], &[0.7, 1.0 - 0.7, 1.0, 0.0]);
        let n = Normalizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]], &["a".into(), "b".into()]).unwrap();
        assert_eq!(n.transform(&[2.0, 9.0], None), vec![0.0, 0.0]);
        assert_eq!(n.transform(&[100.0, 9.0], Some(5.0)), vec![5.0, 0.0]);
    }

    fn flat_env(n: usize, price: f64) -> TradingEnv {
        let series = MarketSeries {
            dates: (0..n)
                .map(|i| NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Duration::days(i as i64))
                .collect(),
            closes: vec![price; n],
            feature_names: vec!["x".into()],
            features: (0..n).map(|i| vec![i as f64]).collect(),
            predictions: Some((0..n).map(|i| Some(pred((i % 10) as f64 / 10.0))).collect()),
        };
        let scaler = Normalizer::fit(&series.features, &series.feature_names).unwrap();
        TradingEnv::new(cfg(), Arc::new(series), Arc::new(scaler), 0, n).unwrap()
    }

    #[test]
    fn episode_runs_to_liquidation() {
        let mut env = flat_env(6, 20.0);
        let first = env.step([0.0, 0.0]).unwrap();
        assert_eq!(first.reward, 0.0);
        assert_eq!(env.values()[1], env.values()[0]);
        let mut last = first;
        while !last.done {
            last = env.step([1.0, 1.0]).unwrap();
        }
        assert_eq!(env.portfolio().coins, 0.0);
        assert_eq!(env.trade_log().len(), 5);
        assert!(env.step([0.0, 0.0]).is_err());
        assert_eq!(env.reset().len(), env.obs_dim());
    }

    proptest! {
        #[test]
        fn constant_price_conserves_value(actions in proptest::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 1..60), price in 0.5f64..500.0) {
            let mut env = flat_env(actions.len() + 1, price);
            for (a1, a2) in actions {
                let before = *env.values().last().unwrap();
                let r = env.step([a1, a2]).unwrap();
                let after = *env.values().last().unwrap();
                prop_assert!((before - r.info.tc - after).abs() < 1e-9);
                prop_assert!(env.portfolio().cash >= 0.0 && env.portfolio().coins >= 0.0);
                prop_assert!((-10.0..=10.0).contains(&r.reward));
                if r.info.kind != ActionKind::Hold {
                    prop_assert!((0.4..=0.6).contains(&r.info.fraction) || r.info.fraction == 0.75);
                }
            }
            prop_assert!(env.is_done());
        }

        #[test]
        fn rewards_are_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(reward_roi(lo) <= reward_roi(hi));
            prop_assert!(reward_sr(lo) <= reward_sr(hi));
        }

        #[test]
        fn zero_fee_round_trip_restores_value(cash in 1.0f64..1e6, price in 0.01f64..1e4, f in 0.4f64..0.6) {
            let c = EnvConfig { fee_rate: 0.0, ..EnvConfig::default() };
            let p = Portfolio { cash, coins: 0.0 };
            let bought = apply_action(p, ActionCommand { kind: ActionKind::Buy, fraction: f }, None, price, &c).unwrap();
            let sold = apply_action(bought.portfolio, ActionCommand { kind: ActionKind::Sell, fraction: 1.0 }, Some(&pred(0.0)), price, &EnvConfig { strong_fraction: 1.0, ..c }).unwrap();
            prop_assert!((sold.portfolio.value(price) - cash).abs() < 1e-9 * cash);
        }
    }
}
