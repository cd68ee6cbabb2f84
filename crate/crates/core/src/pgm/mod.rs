//! Discrete Bayesian networks: feature-group selection and the dynamic
//! network that produces daily direction probabilities.

pub mod dbn;
pub mod discretize;
pub mod factor;
pub mod inference;
pub mod network;
pub mod random;
pub mod selection;
pub mod structure;

use serde::{Deserialize, Serialize};

pub use dbn::{dbn_predict, filter, fit_dbn, predict_series, DbnModel, DbnParams, DirectionPrediction, SliceObservation, SliceParent};
pub use discretize::{discretize_frame, DiscreteFrame, TieRule, DOWN, UP};
pub use factor::Factor;
pub use inference::{brute_force_joint, infer, Evidence};
pub use network::{fit_cpts, BayesNet, DiscreteData, DiscreteVariable};
pub use selection::{evaluate_feature_group, select_feature_group, Selection};
pub use structure::{learn_parents, learn_structure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgmParams {
    /// Quantile bins per continuous feature.
    pub bins: usize,
    pub tie: TieRule,
    pub dbn: DbnParams,
}

impl Default for PgmParams {
    fn default() -> Self {
        PgmParams {
            bins: 3,
            tie: TieRule::Down,
            dbn: DbnParams::default(),
        }
    }
}
