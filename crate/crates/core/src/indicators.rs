//! Technical indicators and feature-group frames.
//!
//! Undefined (warm-up) values are `f64::NAN`. Every indicator is causal: the
//! value at row `t` depends only on rows `..=t`, so recomputing on a growing
//! prefix reproduces the batch result bit for bit.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CrnError, Result};
use crate::market_data::{Column, Dataset, ExoField, OHLCV_COLUMNS};

/// Indicator windows. Defaults follow the usual daily-chart settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorParams {
    pub sma: usize,
    pub ema: usize,
    pub rsi: usize,
    pub natr: usize,
    pub stoch_k: usize,
    pub stoch_d: usize,
    pub bbands: usize,
    pub bbands_k: f64,
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub macd_signal: usize,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        IndicatorParams {
            sma: 10,
            ema: 10,
            rsi: 14,
            natr: 14,
            stoch_k: 14,
            stoch_d: 3,
            bbands: 5,
            bbands_k: 2.0,
            macd_fast: 12,
            macd_slow: 26,
            macd_signal: 9,
        }
    }
}

impl IndicatorParams {
    pub fn validate(&self) -> Result<()> {
        let windows = [
            self.sma,
            self.ema,
            self.rsi,
            self.natr,
            self.stoch_k,
            self.stoch_d,
            self.bbands,
            self.macd_fast,
            self.macd_slow,
            self.macd_signal,
        ];
        if windows.iter().any(|w| *w == 0) {
            return Err(CrnError::Config("indicator windows must be at least 1".into()));
        }
        if self.macd_fast >= self.macd_slow {
            return Err(CrnError::Config("MACD fast period must be shorter than slow".into()));
        }
        Ok(())
    }
}

/// The ten indicator columns of the technical-indicator group, in frame order.
pub const TI_COLUMNS: [&str; 10] = [
    "ad", "obv", "ema", "sma", "rsi", "natr", "macd", "bb_middle", "bb_width", "stoch_k",
];

pub const MACRO_TWEET_COLUMNS: [&str; 6] = ["gold", "msci", "sp500", "usdx", "wti", "tweet_count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    #[serde(rename = "OHLCV")]
    Ohlcv,
    #[serde(rename = "OHLCV+TI")]
    OhlcvTi,
    #[serde(rename = "OHLCV+MACRO+TWEETS")]
    OhlcvMacroTweets,
    #[serde(rename = "ALL")]
    All,
}

impl FeatureGroup {
    pub const ALL_GROUPS: [FeatureGroup; 4] = [
        FeatureGroup::Ohlcv,
        FeatureGroup::OhlcvTi,
        FeatureGroup::OhlcvMacroTweets,
        FeatureGroup::All,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FeatureGroup::Ohlcv => "OHLCV",
            FeatureGroup::OhlcvTi => "OHLCV+TI",
            FeatureGroup::OhlcvMacroTweets => "OHLCV+MACRO+TWEETS",
            FeatureGroup::All => "ALL",
        }
    }

    pub fn columns(self) -> Vec<&'static str> {
        let mut cols: Vec<&'static str> = OHLCV_COLUMNS.to_vec();
        if matches!(self, FeatureGroup::OhlcvTi | FeatureGroup::All) {
            cols.extend(TI_COLUMNS);
        }
        if matches!(self, FeatureGroup::OhlcvMacroTweets | FeatureGroup::All) {
            cols.extend(MACRO_TWEET_COLUMNS);
        }
        cols
    }

    pub fn width(self) -> usize {
        self.columns().len()
    }

    /// Exogenous fields that must be present in the dataset.
    pub fn required_exo(self) -> &'static [ExoField] {
        match self {
            FeatureGroup::Ohlcv | FeatureGroup::OhlcvTi => &[],
            FeatureGroup::OhlcvMacroTweets | FeatureGroup::All => &ExoField::ALL,
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FeatureGroup {
    type Err = CrnError;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL_GROUPS
            .into_iter()
            .find(|g| g.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CrnError::Config(format!("unknown feature group `{s}`")))
    }
}

/// Date-aligned feature columns with a warm-up mask (`true` = row excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub asset: String,
    pub group: FeatureGroup,
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<Column>,
    pub mask: Vec<bool>,
    pub closes: Vec<f64>,
}

impl FeatureFrame {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Number of leading masked rows. The mask is always a prefix.
    pub fn warmup(&self) -> usize {
        self.mask.iter().take_while(|m| **m).count()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c.values[t]).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push_str(",mask\n");
        for t in 0..self.len() {
            out.push_str(&self.dates[t].to_string());
            for c in &self.columns {
                out.push(',');
                let v = c.values[t];
                if v.is_finite() {
                    out.push_str(&v.to_string());
                }
            }
            out.push_str(if self.mask[t] { ",1\n" } else { ",0\n" });
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| CrnError::io(path, e))
    }
}

pub fn sma(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let mut out = vec![f64::NAN; series.len()];
    for t in (window - 1)..series.len() {
        let w = &series[t + 1 - window..=t];
        out[t] = w.iter().sum::<f64>() / window as f64;
    }
    out
}

/// EMA seeded with the SMA of the first `window` defined values.
/// Leading NaNs in the input are skipped.
pub fn ema(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let mut out = vec![f64::NAN; series.len()];
    let Some(first) = series.iter().position(|v| !v.is_nan()) else {
        return out;
    };
    let seed_at = first + window - 1;
    if seed_at >= series.len() {
        return out;
    }
    let k = 2.0 / (window as f64 + 1.0);
    let mut prev = series[first..=seed_at].iter().sum::<f64>() / window as f64;
    out[seed_at] = prev;
    for t in seed_at + 1..series.len() {
        prev = k * series[t] + (1.0 - k) * prev;
        out[t] = prev;
    }
    out
}

/// Wilder RSI. A window with zero average loss reads 100.
pub fn rsi(closes: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let n = closes.len();
    let mut out = vec![f64::NAN; n];
    if n <= window {
        return out;
    }
    let w = window as f64;
    let change = |t: usize| closes[t] - closes[t - 1];
    let mut gain = (1..=window).map(|t| change(t).max(0.0)).sum::<f64>() / w;
    let mut loss = (1..=window).map(|t| (-change(t)).max(0.0)).sum::<f64>() / w;
    let value = |g: f64, l: f64| {
        if l == 0.0 {
            100.0
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        }
    };
    out[window] = value(gain, loss);
    for t in window + 1..n {
        let d = change(t);
        gain = (gain * (w - 1.0) + d.max(0.0)) / w;
        loss = (loss * (w - 1.0) + (-d).max(0.0)) / w;
        out[t] = value(gain, loss);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub line: Vec<f64>,
    pub signal: Vec<f64>,
    pub histogram: Vec<f64>,
}

pub fn macd(closes: &[f64], fast: usize, slow: usize, signal: usize) -> Result<Macd> {
    if fast >= slow {
        return Err(CrnError::Config("MACD fast period must be shorter than slow".into()));
    }
    let f = ema(closes, fast);
    let s = ema(closes, slow);
    let line: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - b).collect();
    let sig = ema(&line, signal);
    let histogram = line.iter().zip(&sig).map(|(a, b)| a - b).collect();
    Ok(Macd {
        line,
        signal: sig,
        histogram,
    })
}

/// On-balance volume with `sign(0) = 0`.
pub fn obv(closes: &[f64], volumes: &[f64]) -> Result<Vec<f64>> {
    if closes.len() != volumes.len() {
        return Err(CrnError::Shape(format!(
            "{} closes vs {} volumes",
            closes.len(),
            volumes.len()
        )));
    }
    let mut out = Vec::with_capacity(closes.len());
    let mut acc = 0.0;
    for t in 0..closes.len() {
        if t > 0 {
            let d = closes[t] - closes[t - 1];
            if d > 0.0 {
                acc += volumes[t];
            } else if d < 0.0 {
                acc -= volumes[t];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Chaikin accumulation/distribution line.
pub fn ad(high: &[f64], low: &[f64], close: &[f64], volume: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    (0..close.len())
        .map(|t| {
            let range = high[t] - low[t];
            if range > 0.0 {
                let mfm = ((close[t] - low[t]) - (high[t] - close[t])) / range;
                acc += mfm * volume[t];
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bollinger {
    pub upper: Vec<f64>,
    pub middle: Vec<f64>,
    pub lower: Vec<f64>,
}

impl Bollinger {
    /// Band width relative to the middle band.
    pub fn width(&self) -> Vec<f64> {
        self.upper
            .iter()
            .zip(&self.lower)
            .zip(&self.middle)
            .map(|((u, l), m)| if *m != 0.0 { (u - l) / m } else { u - l })
            .collect()
    }
}

/// Bollinger bands over a population standard deviation.
pub fn bbands(closes: &[f64], window: usize, k: f64) -> Bollinger {
    let middle = sma(closes, window);
    let mut upper = vec![f64::NAN; closes.len()];
    let mut lower = vec![f64::NAN; closes.len()];
    for t in (window.saturating_sub(1))..closes.len() {
        let w = &closes[t + 1 - window..=t];
        let m = middle[t];
        let sd = (w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / window as f64).sqrt();
        upper[t] = m + k * sd;
        lower[t] = m - k * sd;
    }
    Bollinger { upper, middle, lower }
}

/// Normalised average true range: 100 · ATR / close, Wilder smoothing.
pub fn natr(high: &[f64], low: &[f64], close: &[f64], window: usize) -> Vec<f64> {
    let n = close.len();
    let mut out = vec![f64::NAN; n];
    if n <= window {
        return out;
    }
    let tr = |t: usize| {
        let pc = close[t - 1];
        (high[t] - low[t]).max((high[t] - pc).abs()).max((low[t] - pc).abs())
    };
    let w = window as f64;
    let mut atr = (1..=window).map(tr).sum::<f64>() / w;
    let norm = |a: f64, c: f64| if c != 0.0 { 100.0 * a / c } else { 0.0 };
    out[window] = norm(atr, close[window]);
    for t in window + 1..n {
        atr = (atr * (w - 1.0) + tr(t)) / w;
        out[t] = norm(atr, close[t]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stochastic {
    pub k: Vec<f64>,
    pub d: Vec<f64>,
}

/// Fast stochastic oscillator. A flat range reads 50.
pub fn stoch(high: &[f64], low: &[f64], close: &[f64], k_window: usize, d_window: usize) -> Stochastic {
    let n = close.len();
    let mut k = vec![f64::NAN; n];
    for t in (k_window.saturating_sub(1))..n {
        let lo = low[t + 1 - k_window..=t].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = high[t + 1 - k_window..=t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        k[t] = if hi > lo { 100.0 * (close[t] - lo) / (hi - lo) } else { 50.0 };
    }
    let d = sma_skip_nan(&k, d_window);
    Stochastic { k, d }
}

fn sma_skip_nan(series: &[f64], window: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; series.len()];
    let Some(first) = series.iter().position(|v| !v.is_nan()) else {
        return out;
    };
    let tail = sma(&series[first..], window);
    out[first..].copy_from_slice(&tail);
    out
}

/// All ten indicator columns over a dataset, keyed by `TI_COLUMNS`.
pub fn indicator_columns(ds: &Dataset, p: &IndicatorParams) -> Result<Vec<Column>> {
    p.validate()?;
    let high = ds.column("high")?;
    let low = ds.column("low")?;
    let close = ds.column("close")?;
    let volume = ds.column("volume")?;
    let bb = bbands(close, p.bbands, p.bbands_k);
    let mut values = vec![
        ad(high, low, close, volume),
        obv(close, volume)?,
        ema(close, p.ema),
        sma(close, p.sma),
        rsi(close, p.rsi),
        natr(high, low, close, p.natr),
        macd(close, p.macd_fast, p.macd_slow, p.macd_signal)?.line,
        bb.middle.clone(),
        bb.width(),
        stoch(high, low, close, p.stoch_k, p.stoch_d).k,
    ];
    // The MACD line is only used once its signal chain has a full window
    // behind it: slow + signal - 1 rows (34 with default windows).
    let warmup = p.macd_slow + p.macd_signal - 1;
    for v in values[6].iter_mut().take(warmup) {
        *v = f64::NAN;
    }
    Ok(TI_COLUMNS
        .iter()
        .zip(values.drain(..))
        .map(|(name, values)| Column {
            name: name.to_string(),
            values,
        })
        .collect())
}

/// Builds the feature frame for one group.
///
/// The warm-up mask always spans the indicator warm-up (34 rows with default
/// windows), whatever the group, so every group scores and trades on the same
/// rows.
pub fn compute_feature_frame(ds: &Dataset, group: FeatureGroup, p: &IndicatorParams) -> Result<FeatureFrame> {
    let indicators = indicator_columns(ds, p)?;
    let n = ds.len();
    let mut mask = vec![false; n];
    for c in &indicators {
        for (m, v) in mask.iter_mut().zip(&c.values) {
            *m |= !v.is_finite();
        }
    }
    let mut columns = Vec::with_capacity(group.width());
    for name in group.columns() {
        if let Some(c) = indicators.iter().find(|c| c.name == name) {
            columns.push(c.clone());
        } else {
            let values = ds.column(name).map_err(|_| {
                CrnError::MissingData(format!(
                    "group {group} needs column `{name}`, absent from dataset `{}`",
                    ds.asset
                ))
            })?;
            columns.push(Column {
                name: name.to_string(),
                values: values.to_vec(),
            });
        }
    }
    for c in &columns {
        for (m, v) in mask.iter_mut().zip(&c.values) {
            *m |= !v.is_finite();
        }
    }
    let warm = mask.iter().take_while(|m| **m).count();
    if mask[warm..].iter().any(|m| *m) {
        return Err(CrnError::MissingData(format!(
            "undefined feature values after the warm-up in `{}`",
            ds.asset
        )));
    }
    Ok(FeatureFrame {
        asset: ds.asset.clone(),
        group,
        dates: ds.dates.clone(),
        columns,
        mask,
        closes: ds.closes()?.to_vec(),
    })
}
