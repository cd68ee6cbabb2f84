//! Feature-group scoring by held-out direction accuracy.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::discretize::{discretize_frame, DiscreteFrame, UP};
use super::inference::{infer, Evidence};
use super::structure::learn_structure;
use super::PgmParams;
use crate::error::{CrnError, Result};
use crate::indicators::{compute_feature_frame, FeatureGroup, IndicatorParams};
use crate::market_data::Dataset;

/// Share of the labelled training rows used to fit; the rest validates.
pub const FIT_FRACTION: f64 = 0.8;

/// First row of the validation segment of `rows`.
pub fn validation_start(rows: &Range<usize>) -> usize {
    rows.start + (FIT_FRACTION * rows.len() as f64).floor() as usize
}

/// Fits a network on the first 80% of `rows` and returns its next-day
/// direction accuracy on the remaining 20%. Up is predicted when its
/// posterior exceeds one half.
pub fn evaluate_frame(frame: &DiscreteFrame, rows: Range<usize>, max_parents: usize) -> Result<f64> {
    let cut = validation_start(&rows);
    if cut >= rows.end {
        return Err(CrnError::InsufficientData("empty validation segment".into()));
    }
    let net = learn_structure(&frame.data(rows.start..cut)?, max_parents)?;
    let target = net.len() - 1;
    let mut cache: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut hits = 0usize;
    let mut ups = 0usize;
    for t in cut..rows.end {
        let row = frame.feature_row(t);
        let label = frame
            .direction_at(t)
            .ok_or_else(|| CrnError::Contract(format!("row {t} has no direction label")))?;
        let guess = match cache.get(&row) {
            Some(g) => *g,
            None => {
                let ev: Evidence = row.iter().copied().enumerate().collect();
                let post = infer(&net, &ev, target)?;
                let g = usize::from(post[UP] > 0.5);
                cache.insert(row, g);
                g
            }
        };
        hits += usize::from(guess == label);
        ups += usize::from(label == UP);
    }
    let total = rows.end - cut;
    if ups == 0 || ups == total {
        log::warn!("validation segment of `{}` holds a single direction class", frame.variables.first().map_or("", |v| v.name.as_str()));
    }
    Ok(hits as f64 / total as f64)
}

/// Labelled training rows of a frame: after the warm-up and before the last
/// training row, whose label would look into the test split.
pub fn labelled_train_rows(warmup: usize, split: usize) -> Range<usize> {
    warmup..split.saturating_sub(1).max(warmup)
}

/// Accuracy of one feature group on the training split. Bin edges are fitted
/// on the fit segment only.
pub fn evaluate_feature_group(ds: &Dataset, group: FeatureGroup, ind: &IndicatorParams, params: &PgmParams) -> Result<f64> {
    let frame = compute_feature_frame(ds, group, ind)?;
    let rows = labelled_train_rows(frame.warmup(), ds.split_index());
    let cut = validation_start(&rows);
    let discrete = discretize_frame(&frame, params.bins, rows.start..cut, params.tie)?;
    evaluate_frame(&discrete, rows, params.dbn.max_parents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub group: FeatureGroup,
    pub accuracies: BTreeMap<FeatureGroup, f64>,
    /// Groups that could not be built from the dataset, with the reason.
    pub skipped: BTreeMap<FeatureGroup, String>,
}

/// Scores every group and keeps the most accurate; ties go to the group
/// with fewer features. Groups whose columns are missing are skipped.
pub fn select_feature_group(ds: &Dataset, ind: &IndicatorParams, params: &PgmParams) -> Result<Selection> {
    let mut groups = FeatureGroup::ALL_GROUPS.to_vec();
    groups.sort_by_key(|g| g.width());
    let mut accuracies = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let mut best: Option<(f64, FeatureGroup)> = None;
    for g in groups {
        match evaluate_feature_group(ds, g, ind, params) {
            Ok(acc) => {
                accuracies.insert(g, acc);
                if best.is_none_or(|(b, _)| acc > b) {
                    best = Some((acc, g));
                }
            }
            Err(e @ (CrnError::MissingData(_) | CrnError::UnknownColumn(_))) => {
                log::warn!("skipping feature group {g}: {e}");
                skipped.insert(g, e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let (_, group) = best.ok_or_else(|| CrnError::MissingData("no feature group could be built".into()))?;
    Ok(Selection {
        group,
        accuracies,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::discretize::DOWN;
    use crate::pgm::network::DiscreteVariable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(features: Vec<Vec<usize>>, direction: Vec<usize>) -> DiscreteFrame {
        let n = direction.len();
        DiscreteFrame {
            start: 0,
            variables: (0..features.len())
                .map(|i| DiscreteVariable::categorical(format!("f{i}"), 2))
                .collect(),
            features,
            direction: direction.into_iter().enumerate().map(|(t, d)| (t + 1 < n).then_some(d)).collect(),
        }
    }

    #[test]
    fn leaked_label_scores_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d: Vec<usize> = (0..400).map(|_| rng.random_range(0..2)).collect();
        let f = frame(vec![d.clone()], d);
        assert_eq!(evaluate_frame(&f, 0..399, 3).unwrap(), 1.0);
    }

    #[test]
    fn noise_scores_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 5001;
        let d: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let xs = (0..3).map(|_| (0..n).map(|_| rng.random_range(0..2)).collect()).collect();
        let acc = evaluate_frame(&frame(xs, d), 0..n - 1, 3).unwrap();
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn single_class_validation_is_still_scored() {
        let d: Vec<usize> = (0..200).map(|t| if t < 100 { t % 2 } else { DOWN }).collect();
        let x = (0..200).map(|t| t % 2).collect();
        let acc = evaluate_frame(&frame(vec![x], d), 0..199, 3).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
