use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::network::{DiscreteData, DiscreteVariable};
use crate::error::{CrnError, Result};
use crate::indicators::FeatureFrame;

pub const DIRECTION: &str = "direction";
pub const DOWN: usize = 0;
pub const UP: usize = 1;

/// Which way a zero close-to-close change is labelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    #[default]
    Down,
    Up,
}

/// Next-day direction at row `t`: Up when `close[t+1] > close[t]`.
pub fn direction_labels(closes: &[f64], tie: TieRule) -> Vec<Option<usize>> {
    (0..closes.len())
        .map(|t| {
            let next = closes.get(t + 1)?;
            Some(if *next > closes[t] {
                UP
            } else if *next < closes[t] {
                DOWN
            } else {
                match tie {
                    TieRule::Down => DOWN,
                    TieRule::Up => UP,
                }
            })
        })
        .collect()
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile bin edges of `values`. Duplicate edges are merged; a column with
/// zero spread yields no edges (a single bin).
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Vec::new();
    }
    let mut edges: Vec<f64> = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        let e = quantile(&sorted, k as f64 / bins as f64);
        if edges.last().is_none_or(|last| e > *last) {
            edges.push(e);
        }
    }
    edges
}

/// A feature frame mapped to bins, covering rows `start..` of the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFrame {
    pub start: usize,
    pub variables: Vec<DiscreteVariable>,
    /// `features[j][t - start]` is the bin of feature `j` at row `t`.
    pub features: Vec<Vec<usize>>,
    /// Next-day direction per row; `None` on the last row.
    pub direction: Vec<Option<usize>>,
}

impl DiscreteFrame {
    pub fn end(&self) -> usize {
        self.start + self.direction.len()
    }

    pub fn feature_row(&self, t: usize) -> Vec<usize> {
        self.features.iter().map(|c| c[t - self.start]).collect()
    }

    pub fn direction_at(&self, t: usize) -> Option<usize> {
        self.direction[t - self.start]
    }

    pub fn direction_variable() -> DiscreteVariable {
        DiscreteVariable::categorical(DIRECTION, 2)
    }

    /// Features plus direction (last) over `rows`, which must all be labelled.
    pub fn data(&self, rows: Range<usize>) -> Result<DiscreteData> {
        if rows.start < self.start || rows.end > self.end() {
            return Err(CrnError::Contract(format!(
                "rows {rows:?} outside discretised range {}..{}",
                self.start,
                self.end()
            )));
        }
        let local = rows.start - self.start..rows.end - self.start;
        let mut columns: Vec<Vec<usize>> = self.features.iter().map(|c| c[local.clone()].to_vec()).collect();
        let dir = self.direction[local]
            .iter()
            .map(|d| d.ok_or_else(|| CrnError::Contract("unlabelled row in fit range".into())))
            .collect::<Result<Vec<_>>>()?;
        columns.push(dir);
        let mut variables = self.variables.clone();
        variables.push(Self::direction_variable());
        DiscreteData::new(variables, columns)
    }
}

/// Bins every feature column with quantile edges fitted on `fit_rows` only,
/// and labels next-day direction. Masked warm-up rows are dropped.
pub fn discretize_frame(frame: &FeatureFrame, bins: usize, fit_rows: Range<usize>, tie: TieRule) -> Result<DiscreteFrame> {
    if bins < 2 {
        return Err(CrnError::Config(format!("need at least 2 bins, got {bins}")));
    }
    let start = frame.warmup();
    if frame.mask[start..].iter().any(|m| *m) {
        return Err(CrnError::Contract("warm-up mask must be a prefix".into()));
    }
    let fit = fit_rows.start.max(start)..fit_rows.end.min(frame.len());
    if fit.is_empty() {
        return Err(CrnError::InsufficientData("no unmasked rows to fit bin edges".into()));
    }
    let mut variables = Vec::with_capacity(frame.width());
    let mut features = Vec::with_capacity(frame.width());
    for col in &frame.columns {
        let edges = quantile_edges(&col.values[fit.clone()], bins);
        if edges.is_empty() {
            log::warn!("column `{}` has zero spread on the fit rows; using a single bin", col.name);
        }
        let var = DiscreteVariable {
            name: col.name.clone(),
            cardinality: edges.len() + 1,
            bin_edges: edges,
        };
        features.push(col.values[start..].iter().map(|x| var.bin_of(*x)).collect());
        variables.push(var);
    }
    let direction = direction_labels(&frame.closes, tie)[start..].to_vec();
    Ok(DiscreteFrame {
        start,
        variables,
        features,
        direction,
    })
}
