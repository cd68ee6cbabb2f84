//! Two-slice dynamic Bayesian network over the discretised features and the
//! next-day direction, queried by forward filtering over a short window.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::discretize::{DiscreteFrame, DOWN, UP};
use super::factor::Factor;
use super::inference::{eliminate_all, normalized, Evidence};
use super::network::{fit_cpts, laplace_cpt, topological_order, BayesNet, DiscreteVariable, CPT_ROW_TOLERANCE};
use super::structure::{bic_from_columns, learn_parents, MIN_GAIN};
use crate::error::{CrnError, Result};

pub const MIN_DBN_ROWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbnParams {
    /// Parent cap inside a slice.
    pub max_parents: usize,
    /// Parent cap of the direction node in the transition model.
    pub max_direction_parents: usize,
    /// Number of slices consumed by a prediction.
    pub window: usize,
}

impl Default for DbnParams {
    fn default() -> Self {
        DbnParams {
            max_parents: 3,
            max_direction_parents: 4,
            window: 5,
        }
    }
}

/// A transition-model parent: a variable of the same slice or of the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceParent {
    Current(usize),
    Previous(usize),
}

/// First-order DBN. `prior` is the network of the first slice; every later
/// slice uses `transition_parents` / `transition_cpts`, laid out like
/// [`BayesNet`] CPTs with parents in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbnModel {
    pub variables: Vec<DiscreteVariable>,
    pub target: usize,
    pub window: usize,
    pub prior: BayesNet,
    pub transition_parents: Vec<Vec<SliceParent>>,
    pub transition_cpts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionPrediction {
    pub p_up: f64,
    pub p_down: f64,
}

impl DirectionPrediction {
    pub fn from_posterior(post: &[f64]) -> Self {
        let p_up = post[UP].clamp(0.0, 1.0);
        DirectionPrediction { p_up, p_down: 1.0 - p_up }
    }

    pub fn uniform() -> Self {
        DirectionPrediction { p_up: 0.5, p_down: 0.5 }
    }
}

/// One day of a prediction window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceObservation {
    pub features: Vec<usize>,
    pub direction: Option<usize>,
}

impl DbnModel {
    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn cardinality(&self, v: usize) -> usize {
        self.variables[v].cardinality
    }

    fn parent_card(&self, p: SliceParent) -> usize {
        match p {
            SliceParent::Current(i) | SliceParent::Previous(i) => self.cardinality(i),
        }
    }

    pub fn intra_edges(&self) -> usize {
        self.prior.edge_count()
    }

    pub fn inter_edges(&self) -> usize {
        self.transition_parents
            .iter()
            .flatten()
            .filter(|p| matches!(p, SliceParent::Previous(_)))
            .count()
    }

    pub fn edge_count(&self) -> usize {
        self.intra_edges() + self.inter_edges()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        self.prior.validate()?;
        if self.prior.variables != self.variables {
            return Err(CrnError::Shape("prior network variables differ from the model".into()));
        }
        if self.target >= n || self.cardinality(self.target) != 2 {
            return Err(CrnError::Contract("target must be a binary model variable".into()));
        }
        if self.window == 0 {
            return Err(CrnError::Config("window must be at least one slice".into()));
        }
        if self.transition_parents.len() != n || self.transition_cpts.len() != n {
            return Err(CrnError::Shape("transition model does not cover every variable".into()));
        }
        let mut current = vec![Vec::new(); n];
        for (v, ps) in self.transition_parents.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for p in ps {
                let (SliceParent::Current(i) | SliceParent::Previous(i)) = *p;
                if i >= n || *p == SliceParent::Current(v) || !seen.insert(*p) {
                    return Err(CrnError::Shape(format!("bad transition parents for `{}`", self.variables[v].name)));
                }
                if let SliceParent::Current(i) = p {
                    current[v].push(*i);
                }
            }
            let card = self.cardinality(v);
            let q: usize = ps.iter().map(|p| self.parent_card(*p)).product();
            let cpt = &self.transition_cpts[v];
            if cpt.len() != q * card {
                return Err(CrnError::Shape(format!(
                    "transition CPT of `{}` has {} entries, expected {}",
                    self.variables[v].name,
                    cpt.len(),
                    q * card
                )));
            }
            for row in cpt.chunks(card) {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > CPT_ROW_TOLERANCE || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(CrnError::Contract(format!(
                        "transition CPT row of `{}` is not a distribution",
                        self.variables[v].name
                    )));
                }
            }
        }
        if topological_order(&current).is_none() {
            return Err(CrnError::Contract("transition slice has a cycle".into()));
        }
        Ok(())
    }

    /// Transition CPT of `v` as a factor, with previous-slice variables named
    /// `0..n` and current-slice variables `n..2n`.
    fn transition_factor(&self, v: usize) -> Factor {
        let n = self.len();
        let mut vars: Vec<usize> = self.transition_parents[v]
            .iter()
            .map(|p| match p {
                SliceParent::Previous(i) => *i,
                SliceParent::Current(i) => n + i,
            })
            .collect();
        vars.push(n + v);
        let mut cards: Vec<usize> = self.transition_parents[v].iter().map(|p| self.parent_card(*p)).collect();
        cards.push(self.cardinality(v));
        Factor::new(vars, cards, self.transition_cpts[v].clone())
    }

    /// Variables read from the previous slice by the transition model.
    fn interface(&self) -> BTreeSet<usize> {
        self.transition_parents
            .iter()
            .flatten()
            .filter_map(|p| match p {
                SliceParent::Previous(i) => Some(*i),
                SliceParent::Current(_) => None,
            })
            .collect()
    }

    /// The model unrolled over `slices` slices as an ordinary network.
    /// Variable `i` of slice `k` becomes `k * n + i`, named `name@k`.
    pub fn unroll(&self, slices: usize) -> Result<BayesNet> {
        let n = self.len();
        let mut variables = Vec::with_capacity(n * slices);
        let mut parents = Vec::with_capacity(n * slices);
        let mut cpts = Vec::with_capacity(n * slices);
        for k in 0..slices {
            for v in 0..n {
                let mut var = self.variables[v].clone();
                var.name = format!("{}@{k}", var.name);
                variables.push(var);
                if k == 0 {
                    parents.push(self.prior.parents[v].clone());
                    cpts.push(self.prior.cpts[v].clone());
                } else {
                    parents.push(
                        self.transition_parents[v]
                            .iter()
                            .map(|p| match p {
                                SliceParent::Current(i) => k * n + i,
                                SliceParent::Previous(i) => (k - 1) * n + i,
                            })
                            .collect(),
                    );
                    cpts.push(self.transition_cpts[v].clone());
                }
            }
        }
        BayesNet::new(variables, parents, cpts)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DbnModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Evidence of a slice sequence in unrolled-network numbering.
pub fn unrolled_evidence(evidence: &[Vec<Option<usize>>]) -> Evidence {
    let n = evidence.first().map_or(0, Vec::len);
    evidence
        .iter()
        .enumerate()
        .flat_map(|(k, slice)| {
            slice
                .iter()
                .enumerate()
                .filter_map(move |(v, x)| x.map(|x| (k * n + v, x)))
        })
        .collect()
}

fn reduce_all(f: Factor, ev: &[(usize, usize)]) -> Factor {
    ev.iter().fold(f, |f, (v, x)| f.reduce(*v, *x))
}

/// Forward filtering. `evidence[k][v]` is the observed value of variable `v`
/// in slice `k`; returns the posterior of `query` in the last slice.
pub fn filter(model: &DbnModel, evidence: &[Vec<Option<usize>>], query: usize) -> Result<Vec<f64>> {
    let n = model.len();
    let Some(last) = evidence.len().checked_sub(1) else {
        return Err(CrnError::Contract("empty evidence window".into()));
    };
    if query >= n {
        return Err(CrnError::Contract(format!("query variable {query} does not exist")));
    }
    for slice in evidence {
        if slice.len() != n {
            return Err(CrnError::Shape(format!("slice has {} entries, model has {n} variables", slice.len())));
        }
        for (v, x) in slice.iter().enumerate() {
            if x.is_some_and(|x| x >= model.cardinality(v)) {
                return Err(CrnError::Contract(format!(
                    "observed value out of range for `{}`",
                    model.variables[v].name
                )));
            }
        }
    }
    if evidence[last][query].is_some() {
        return Err(CrnError::Contract("query variable is part of the evidence".into()));
    }
    let interface = model.interface();
    let observed = |k: usize, offset: usize| -> Vec<(usize, usize)> {
        evidence[k]
            .iter()
            .enumerate()
            .filter_map(|(v, x)| x.map(|x| (offset + v, x)))
            .collect()
    };
    let keep = |k: usize, v: usize| if k == last { v == query } else { interface.contains(&v) };

    // First slice, numbered 0..n.
    let ev0 = observed(0, 0);
    let mut factors: Vec<Factor> = (0..n).map(|v| reduce_all(model.prior.factor(v), &ev0)).collect();
    let hidden = (0..n).filter(|v| evidence[0][*v].is_none() && !keep(0, *v)).collect();
    eliminate_all(&mut factors, hidden);
    let mut belief = normalize_belief(factors)?;

    for k in 1..=last {
        let mut ev = observed(k - 1, 0);
        ev.extend(observed(k, n));
        let mut factors = vec![belief];
        factors.extend((0..n).map(|v| reduce_all(model.transition_factor(v), &ev)));
        let hidden = (0..n)
            .chain((0..n).filter(|v| evidence[k][*v].is_none() && !keep(k, *v)).map(|v| n + v))
            .collect();
        eliminate_all(&mut factors, hidden);
        belief = normalize_belief(factors)?.relabel(|v| v - n);
    }
    if belief.vars() != [query] {
        return Err(CrnError::Contract("query variable vanished during filtering".into()));
    }
    normalized(&belief)
}

fn normalize_belief(factors: Vec<Factor>) -> Result<Factor> {
    let mut f = factors
        .into_iter()
        .reduce(|a, b| a.product(&b))
        .unwrap_or_else(|| Factor::scalar(1.0));
    let z = f.total();
    if !(z > 0.0) || !z.is_finite() {
        return Err(CrnError::ZeroProbability);
    }
    f.scale(1.0 / z);
    Ok(f)
}

/// Posterior of the next-day direction given a window of fully observed
/// feature slices; the direction of every slice but the last may be known.
pub fn dbn_predict(model: &DbnModel, window: &[SliceObservation]) -> Result<DirectionPrediction> {
    if window.len() != model.window {
        return Err(CrnError::Contract(format!(
            "prediction window has {} slices, model expects {}",
            window.len(),
            model.window
        )));
    }
    if window.last().is_some_and(|s| s.direction.is_some()) {
        return Err(CrnError::Contract("direction of the last slice is the query".into()));
    }
    let features: Vec<usize> = (0..model.len()).filter(|v| *v != model.target).collect();
    let evidence = window
        .iter()
        .map(|s| {
            if s.features.len() != features.len() {
                return Err(CrnError::Shape(format!(
                    "slice has {} features, model has {}",
                    s.features.len(),
                    features.len()
                )));
            }
            let mut slice = vec![None; model.len()];
            for (v, x) in features.iter().zip(&s.features) {
                slice[*v] = Some(*x);
            }
            slice[model.target] = s.direction;
            Ok(slice)
        })
        .collect::<Result<Vec<_>>>()?;
    let post = filter(model, &evidence, model.target)?;
    Ok(DirectionPrediction::from_posterior(&post))
}

/// Fits a DBN on rows `frame.start..train_end`. The intra-slice structure is
/// learned by BIC search; each variable also depends on its own previous
/// value, and the direction node may take previous-day features that are not
/// adjacent to it inside the slice, chosen greedily by BIC.
pub fn fit_dbn(frame: &DiscreteFrame, train_end: usize, params: &DbnParams) -> Result<DbnModel> {
    let rows = frame.start..train_end.min(frame.end());
    if rows.len() < MIN_DBN_ROWS {
        return Err(CrnError::InsufficientData(format!(
            "DBN fitting needs {MIN_DBN_ROWS} training rows after warm-up, got {}",
            rows.len()
        )));
    }
    // The label of the last training row looks past the split.
    let data = frame.data(rows.start..rows.end - 1)?;
    let n = data.variables.len();
    let target = n - 1;
    let intra = learn_parents(&data, params.max_parents)?;
    let prior = fit_cpts(&data.variables, &intra, &data)?;

    let m = data.rows();
    let prev = |i: usize| &data.columns[i][..m - 1];
    let cur = |i: usize| &data.columns[i][1..];
    let card = |i: usize| data.variables[i].cardinality;

    let mut transition_parents: Vec<Vec<SliceParent>> = intra
        .iter()
        .enumerate()
        .map(|(v, ps)| {
            let mut list: Vec<SliceParent> = ps.iter().map(|p| SliceParent::Current(*p)).collect();
            list.push(SliceParent::Previous(v));
            list
        })
        .collect();

    let mut candidates: Vec<usize> = (0..target)
        .filter(|f| !intra[target].contains(f) && !intra[*f].contains(&target))
        .collect();
    candidates.sort_by(|a, b| data.variables[*a].name.cmp(&data.variables[*b].name));
    let columns_of = |ps: &[SliceParent]| -> Vec<(&[usize], usize)> {
        ps.iter()
            .map(|p| match p {
                SliceParent::Current(i) => (cur(*i), card(*i)),
                SliceParent::Previous(i) => (prev(*i), card(*i)),
            })
            .collect()
    };
    while transition_parents[target].len() < params.max_direction_parents {
        let base = bic_from_columns(cur(target), 2, &columns_of(&transition_parents[target]));
        let mut best: Option<(f64, usize)> = None;
        for &f in &candidates {
            let mut trial = transition_parents[target].clone();
            trial.push(SliceParent::Previous(f));
            let gain = bic_from_columns(cur(target), 2, &columns_of(&trial)) - base;
            if gain > MIN_GAIN && best.is_none_or(|(b, _)| gain > b) {
                best = Some((gain, f));
            }
        }
        let Some((_, f)) = best else { break };
        transition_parents[target].push(SliceParent::Previous(f));
        candidates.retain(|c| *c != f);
    }

    let transition_cpts = transition_parents
        .iter()
        .enumerate()
        .map(|(v, ps)| laplace_cpt(cur(v), card(v), &columns_of(ps)))
        .collect();
    let model = DbnModel {
        variables: data.variables.clone(),
        target,
        window: params.window,
        prior,
        transition_parents,
        transition_cpts,
    };
    model.validate()?;
    Ok(model)
}

/// Predictions for every row of `frame` whose window lies inside it, indexed
/// by absolute row; earlier rows are `None`.
pub fn predict_series(model: &DbnModel, frame: &DiscreteFrame) -> Result<Vec<Option<DirectionPrediction>>> {
    let w = model.window;
    let mut out = vec![None; frame.end()];
    for t in (frame.start + w - 1)..frame.end() {
        let window: Vec<SliceObservation> = (t + 1 - w..=t)
            .map(|r| SliceObservation {
                features: frame.feature_row(r),
                direction: if r == t { None } else { frame.direction_at(r) },
            })
            .collect();
        out[t] = Some(dbn_predict(model, &window)?);
    }
    Ok(out)
}

/// Share of rows in `rows` where the predicted direction matches the label.
pub fn prediction_accuracy(preds: &[Option<DirectionPrediction>], frame: &DiscreteFrame, rows: std::ops::Range<usize>) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for t in rows {
        let (Some(Some(p)), Some(d)) = (preds.get(t), frame.direction_at(t)) else {
            continue;
        };
        let guess = if p.p_up > 0.5 { UP } else { DOWN };
        hits += usize::from(guess == d);
        total += 1;
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::inference::brute_force_joint;
    use crate::pgm::random::random_dbn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(features: Vec<Vec<usize>>, cards: &[usize], direction: Vec<usize>) -> DiscreteFrame {
        let n = direction.len();
        DiscreteFrame {
            start: 0,
            variables: cards
                .iter()
                .enumerate()
                .map(|(i, c)| DiscreteVariable::categorical(format!("f{i}"), *c))
                .collect(),
            features,
            direction: direction.into_iter().enumerate().map(|(t, d)| (t + 1 < n).then_some(d)).collect(),
        }
    }

    fn markov_directions(rng: &mut ChaCha8Rng, n: usize, stay: f64) -> Vec<usize> {
        let mut d = vec![UP];
        for _ in 1..n {
            let last = *d.last().unwrap();
            d.push(if rng.random_bool(stay) { last } else { 1 - last });
        }
        d
    }

    #[test]
    fn uniform_model_predicts_even_odds() {
        let variables = vec![DiscreteVariable::categorical("x", 3), DiscreteVariable::categorical("direction", 2)];
        let prior = BayesNet::new(variables.clone(), vec![vec![], vec![]], vec![vec![1.0 / 3.0; 3], vec![0.5; 2]]).unwrap();
        let model = DbnModel {
            variables,
            target: 1,
            window: 5,
            prior,
            transition_parents: vec![vec![SliceParent::Previous(0)], vec![SliceParent::Previous(1), SliceParent::Previous(0)]],
            transition_cpts: vec![vec![1.0 / 3.0; 9], vec![0.5; 12]],
        };
        model.validate().unwrap();
        let window: Vec<SliceObservation> = (0..5)
            .map(|k| SliceObservation {
                features: vec![k % 3],
                direction: (k < 4).then_some(k % 2),
            })
            .collect();
        let p = dbn_predict(&model, &window).unwrap();
        assert!((p.p_up - 0.5).abs() < 1e-12);
        assert!((p.p_up + p.p_down - 1.0).abs() < 1e-12);
        assert!(dbn_predict(&model, &window[..4]).is_err());
    }

    #[test]
    fn persistent_direction_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3000;
        let d = markov_directions(&mut rng, n, 0.9);
        let x: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let f = frame(vec![x], &[3], d);
        let model = fit_dbn(&f, n, &DbnParams::default()).unwrap();
        assert_eq!(model.transition_parents[1], vec![SliceParent::Previous(1)]);
        let p_stay = model.transition_cpts[1][UP * 2 + UP];
        assert!((p_stay - 0.9).abs() < 0.03, "{p_stay}");
        let window: Vec<SliceObservation> = (0..5)
            .map(|k| SliceObservation {
                features: vec![1],
                direction: (k < 4).then_some(UP),
            })
            .collect();
        let p = dbn_predict(&model, &window).unwrap();
        assert!((p.p_up - p_stay).abs() < 1e-12);
        assert!(model.edge_count() <= 3);
    }

    #[test]
    fn noise_features_leave_the_class_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 2000;
        let d: Vec<usize> = (0..n).map(|_| usize::from(rng.random_bool(0.6))).collect();
        let xs: Vec<Vec<usize>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(0..3)).collect()).collect();
        let f = frame(xs, &[3, 3, 3], d);
        let model = fit_dbn(&f, n, &DbnParams::default()).unwrap();
        let preds = predict_series(&model, &f).unwrap();
        for p in preds.iter().flatten() {
            assert!((p.p_up - 0.6).abs() < 0.06, "{}", p.p_up);
        }
        assert!(preds[..4].iter().all(Option::is_none));
    }

    #[test]
    fn too_short_training_set_is_rejected() {
        let f = frame(vec![vec![0; 99]], &[2], vec![0; 99]);
        assert!(matches!(fit_dbn(&f, 99, &DbnParams::default()), Err(CrnError::InsufficientData(_))));
    }

    #[test]
    fn filtering_matches_unrolled_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..40 {
            let n = rng.random_range(1..=3);
            let slices = rng.random_range(1..=4);
            let model = random_dbn(&mut rng, n, 2, 5);
            let query = model.target;
            let evidence: Vec<Vec<Option<usize>>> = (0..slices)
                .map(|k| {
                    (0..n)
                        .map(|v| {
                            let hide = k + 1 == slices && v == query;
                            (!hide && rng.random_bool(0.5)).then(|| rng.random_range(0..model.cardinality(v)))
                        })
                        .collect()
                })
                .collect();
            let a = filter(&model, &evidence, query).unwrap();
            let net = model.unroll(slices).unwrap();
            let b = brute_force_joint(&net, &unrolled_evidence(&evidence), (slices - 1) * n + query).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = random_dbn(&mut rng, 3, 3, 5);
        assert_eq!(DbnModel::from_json(&model.to_json().unwrap()).unwrap(), model);
    }
}
