//! Seeded synthetic markets for tests, demos and the bundled fixture.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CrnError, Result};
use crate::market_data::{Column, Dataset};

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

fn dates(n: usize) -> Vec<NaiveDate> {
    (0..n).map(|i| start_date() + Duration::days(i as i64)).collect()
}

fn col(name: &str, values: Vec<f64>) -> Column {
    Column {
        name: name.into(),
        values,
    }
}

/// Bars whose open is the previous close, with a small seeded wick.
fn ohlcv_columns<R: Rng>(closes: &[f64], rng: &mut R) -> Vec<Column> {
    let n = closes.len();
    let mut open = Vec::with_capacity(n);
    let mut high = Vec::with_capacity(n);
    let mut low = Vec::with_capacity(n);
    let mut volume = Vec::with_capacity(n);
    for (t, &c) in closes.iter().enumerate() {
        let o = if t == 0 { c } else { closes[t - 1] };
        open.push(o);
        high.push(o.max(c) * (1.0 + rng.random_range(0.0..0.01)));
        low.push(o.min(c) * (1.0 - rng.random_range(0.0..0.01)));
        volume.push(rng.random_range(1_000.0..2_000.0f64).round());
    }
    vec![
        col("open", open),
        col("high", high),
        col("low", low),
        col("close", closes.to_vec()),
        col("volume", volume),
    ]
}

/// Price compounding by `daily_return` every day from 100.
pub fn uptrend_market(days: usize, daily_return: f64, seed: u64) -> Result<Dataset> {
    if days < 3 {
        return Err(CrnError::TooSmall(format!("{days} days")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let closes: Vec<f64> = (0..days).map(|t| 100.0 * (1.0 + daily_return).powi(t as i32)).collect();
    Dataset::new("UPTREND", dates(days), ohlcv_columns(&closes, &mut rng))
}

/// Knobs for [`regime_market`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeParams {
    pub days: usize,
    /// Probability the regime carries over to the next day.
    pub persistence: f64,
    /// Probability that the next close moves in the regime's direction.
    pub accuracy: f64,
    /// Size of a daily move.
    pub move_size: f64,
}

impl Default for RegimeParams {
    fn default() -> Self {
        RegimeParams {
            days: 600,
            persistence: 0.7,
            accuracy: 0.85,
            move_size: 0.02,
        }
    }
}

/// A market switching between up and down regimes. The `tweet_count`
/// column reveals today's regime; tomorrow's close moves in the regime's
/// direction with probability `accuracy`. Macro columns are unrelated
/// random walks, and OHLCV carries no information about the regime beyond
/// the realised prices.
pub fn regime_market(p: &RegimeParams, seed: u64) -> Result<Dataset> {
    if p.days < 3 {
        return Err(CrnError::TooSmall(format!("{} days", p.days)));
    }
    if !(0.0..=1.0).contains(&p.persistence) || !(0.0..=1.0).contains(&p.accuracy) || !(p.move_size > 0.0 && p.move_size < 1.0) {
        return Err(CrnError::Config("regime market parameters out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::<f64>::new(0.0, 0.2).expect("valid normal");
    let mut up = rng.random_bool(0.5);
    let mut regimes = Vec::with_capacity(p.days);
    let mut closes = Vec::with_capacity(p.days);
    let mut price = 100.0;
    for t in 0..p.days {
        if t > 0 {
            let follows = rng.random_bool(p.accuracy);
            let rises = up == follows;
            let size = p.move_size * (1.0 + jitter.sample(&mut rng)).max(0.2);
            price *= if rises { 1.0 + size } else { 1.0 / (1.0 + size) };
            if !rng.random_bool(p.persistence) {
                up = !up;
            }
        }
        regimes.push(up);
        closes.push(price);
    }
    let mut columns = ohlcv_columns(&closes, &mut rng);
    for (name, level) in [("gold", 1500.0), ("msci", 2000.0), ("sp500", 3500.0), ("usdx", 95.0), ("wti", 60.0)] {
        let mut x = level;
        let walk = (0..p.days)
            .map(|_| {
                x *= 1.0 + rng.random_range(-0.01..0.01);
                x
            })
            .collect();
        columns.push(col(name, walk));
    }
    let tweets = regimes
        .iter()
        .map(|&u| (if u { 3_000.0 } else { 1_000.0 } + rng.random_range(-300.0..300.0f64)).round())
        .collect();
    columns.push(col("tweet_count", tweets));
    Dataset::new("REGIME", dates(p.days), columns)
}

/// The bundled 200-row fixture: a short regime market with exogenous columns.
pub fn fixture_market(seed: u64) -> Result<Dataset> {
    regime_market(
        &RegimeParams {
            days: 200,
            ..RegimeParams::default()
        },
        seed,
    )
}
