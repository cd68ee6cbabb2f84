//! Score-based structure search.

use std::collections::HashMap;

use super::network::{fit_cpts, BayesNet, DiscreteData};
use crate::error::{CrnError, Result};

pub const MIN_STRUCTURE_ROWS: usize = 50;

/// Smallest delta that counts as an improvement; guards against cycling on
/// rounding noise.
pub(crate) const MIN_GAIN: f64 = 1e-9;

/// BIC of one family: `Σ N_jk ln(N_jk / N_j) − ½ ln N · q (r − 1)`.
pub fn family_bic(data: &DiscreteData, child: usize, parents: &[usize]) -> f64 {
    let cols: Vec<(&[usize], usize)> = parents
        .iter()
        .map(|p| (data.columns[*p].as_slice(), data.variables[*p].cardinality))
        .collect();
    bic_from_columns(&data.columns[child], data.variables[child].cardinality, &cols)
}

/// Family BIC over raw columns; the first parent is most significant.
pub fn bic_from_columns(child: &[usize], card: usize, parents: &[(&[usize], usize)]) -> f64 {
    let n = child.len();
    let q: usize = parents.iter().map(|(_, c)| *c).product();
    let mut counts = vec![0u32; q * card];
    for (row, x) in child.iter().enumerate() {
        let cfg = parents.iter().fold(0, |acc, (col, c)| acc * c + col[row]);
        counts[cfg * card + x] += 1;
    }
    let mut ll = 0.0;
    for block in counts.chunks(card) {
        let nj: u32 = block.iter().sum();
        if nj == 0 {
            continue;
        }
        for &njk in block.iter().filter(|c| **c > 0) {
            ll += f64::from(njk) * (f64::from(njk) / f64::from(nj)).ln();
        }
    }
    ll - 0.5 * (n as f64).ln() * (q * (card - 1)) as f64
}

/// Is `target` an ancestor of `node`?
fn is_ancestor(parents: &[Vec<usize>], target: usize, node: usize) -> bool {
    let mut stack = vec![node];
    let mut seen = vec![false; parents.len()];
    while let Some(v) = stack.pop() {
        for &p in &parents[v] {
            if p == target {
                return true;
            }
            if !seen[p] {
                seen[p] = true;
                stack.push(p);
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Move {
    Add(usize, usize),
    Remove(usize, usize),
    Reverse(usize, usize),
}

struct Scorer<'a> {
    data: &'a DiscreteData,
    cache: HashMap<(usize, Vec<usize>), f64>,
}

impl Scorer<'_> {
    fn score(&mut self, child: usize, parents: &[usize]) -> f64 {
        let mut key = parents.to_vec();
        key.sort_unstable();
        if let Some(s) = self.cache.get(&(child, key.clone())) {
            return *s;
        }
        let s = family_bic(self.data, child, &key);
        self.cache.insert((child, key), s);
        s
    }
}

fn with(ps: &[usize], add: usize) -> Vec<usize> {
    let mut v = ps.to_vec();
    v.push(add);
    v.sort_unstable();
    v
}

fn without(ps: &[usize], drop: usize) -> Vec<usize> {
    ps.iter().copied().filter(|p| *p != drop).collect()
}

/// Greedy hill-climbing over single-edge additions, removals and reversals,
/// maximising the total BIC. Candidate moves are visited in lexicographic
/// order of variable names and only a strictly better move replaces the
/// incumbent, so the result is deterministic. Returns parent lists sorted by
/// variable index.
pub fn learn_parents(data: &DiscreteData, max_parents: usize) -> Result<Vec<Vec<usize>>> {
    let n = data.variables.len();
    let rows = data.rows();
    let empty_params: usize = data.variables.iter().map(|v| v.cardinality.saturating_sub(1)).sum();
    if rows < MIN_STRUCTURE_ROWS || rows < empty_params {
        return Err(CrnError::InsufficientData(format!(
            "structure search needs at least {} rows, got {rows}",
            MIN_STRUCTURE_ROWS.max(empty_params)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| data.variables[*a].name.cmp(&data.variables[*b].name).then(a.cmp(b)));

    let mut scorer = Scorer {
        data,
        cache: HashMap::new(),
    };
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    loop {
        let mut best: Option<(f64, Move)> = None;
        for &u in &order {
            for &v in &order {
                if u == v {
                    continue;
                }
                let present = parents[v].contains(&u);
                let mut candidates = Vec::with_capacity(2);
                if present {
                    let delta = scorer.score(v, &without(&parents[v], u)) - scorer.score(v, &parents[v]);
                    candidates.push((delta, Move::Remove(u, v)));
                    if parents[u].len() < max_parents {
                        let mut trial = parents.clone();
                        trial[v] = without(&parents[v], u);
                        if !is_ancestor(&trial, u, v) {
                            let delta = delta + scorer.score(u, &with(&parents[u], v)) - scorer.score(u, &parents[u]);
                            candidates.push((delta, Move::Reverse(u, v)));
                        }
                    }
                } else if !parents[u].contains(&v) && parents[v].len() < max_parents && !is_ancestor(&parents, v, u) {
                    let delta = scorer.score(v, &with(&parents[v], u)) - scorer.score(v, &parents[v]);
                    candidates.push((delta, Move::Add(u, v)));
                }
                for (delta, mv) in candidates {
                    if delta > MIN_GAIN && best.is_none_or(|(b, _)| delta > b) {
                        best = Some((delta, mv));
                    }
                }
            }
        }
        let Some((_, mv)) = best else { break };
        match mv {
            Move::Add(u, v) => parents[v] = with(&parents[v], u),
            Move::Remove(u, v) => parents[v] = without(&parents[v], u),
            Move::Reverse(u, v) => {
                parents[v] = without(&parents[v], u);
                parents[u] = with(&parents[u], v);
            }
        }
    }
    Ok(parents)
}

/// Learns a structure with [`learn_parents`] and fits its CPTs.
pub fn learn_structure(data: &DiscreteData, max_parents: usize) -> Result<BayesNet> {
    let parents = learn_parents(data, max_parents)?;
    fit_cpts(&data.variables, &parents, data)
}

/// Total BIC of a structure.
pub fn network_bic(data: &DiscreteData, parents: &[Vec<usize>]) -> f64 {
    parents.iter().enumerate().map(|(v, ps)| family_bic(data, v, ps)).sum()
}
