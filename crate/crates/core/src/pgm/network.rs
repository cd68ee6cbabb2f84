use serde::{Deserialize, Serialize};

use super::factor::Factor;
use crate::error::{CrnError, Result};

/// A discrete variable. Variables discretised from a continuous column keep
/// their bin edges; bin `i` covers `(edges[i-1], edges[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVariable {
    pub name: String,
    pub cardinality: usize,
    #[serde(default)]
    pub bin_edges: Vec<f64>,
}

impl DiscreteVariable {
    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        DiscreteVariable {
            name: name.into(),
            cardinality,
            bin_edges: Vec::new(),
        }
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let b = self.bin_edges.partition_point(|e| *e < x);
        b.min(self.cardinality - 1)
    }
}

/// Column-major table of discrete observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteData {
    pub variables: Vec<DiscreteVariable>,
    pub columns: Vec<Vec<usize>>,
}

impl DiscreteData {
    pub fn new(variables: Vec<DiscreteVariable>, columns: Vec<Vec<usize>>) -> Result<Self> {
        if variables.len() != columns.len() {
            return Err(CrnError::Shape(format!(
                "{} variables but {} columns",
                variables.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, Vec::len);
        for (v, c) in variables.iter().zip(&columns) {
            if c.len() != rows {
                return Err(CrnError::Shape(format!("column `{}` has {} rows, expected {rows}", v.name, c.len())));
            }
            if let Some(bad) = c.iter().find(|x| **x >= v.cardinality) {
                return Err(CrnError::Shape(format!(
                    "value {bad} out of range for `{}` (cardinality {})",
                    v.name, v.cardinality
                )));
            }
        }
        Ok(DiscreteData { variables, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }
}

/// Discrete Bayesian network.
///
/// The CPT of variable `v` with parents `p_1..p_k` is a flat row-major array:
/// entry `config · card(v) + value`, where `config` is the mixed-radix index of
/// the parent values with `p_1` most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    pub variables: Vec<DiscreteVariable>,
    pub parents: Vec<Vec<usize>>,
    pub cpts: Vec<Vec<f64>>,
}

pub const CPT_ROW_TOLERANCE: f64 = 1e-9;

impl BayesNet {
    pub fn new(variables: Vec<DiscreteVariable>, parents: Vec<Vec<usize>>, cpts: Vec<Vec<f64>>) -> Result<Self> {
        let net = BayesNet {
            variables,
            parents,
            cpts,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn cardinality(&self, v: usize) -> usize {
        self.variables[v].cardinality
    }

    pub fn parent_configs(&self, v: usize) -> usize {
        self.parents[v].iter().map(|p| self.cardinality(*p)).product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.variables.len();
        if self.parents.len() != n || self.cpts.len() != n {
            return Err(CrnError::Shape("parents/cpts length differs from variable count".into()));
        }
        for (v, ps) in self.parents.iter().enumerate() {
            if ps.iter().any(|p| *p >= n || *p == v) {
                return Err(CrnError::Shape(format!("bad parent list for `{}`", self.variables[v].name)));
            }
        }
        if topological_order(&self.parents).is_none() {
            return Err(CrnError::Contract("graph has a cycle".into()));
        }
        for v in 0..n {
            let card = self.cardinality(v);
            let expected = self.parent_configs(v) * card;
            let cpt = &self.cpts[v];
            if cpt.len() != expected {
                return Err(CrnError::Shape(format!(
                    "CPT of `{}` has {} entries, expected {expected}",
                    self.variables[v].name,
                    cpt.len()
                )));
            }
            for row in cpt.chunks(card) {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > CPT_ROW_TOLERANCE || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(CrnError::Contract(format!(
                        "CPT row of `{}` is not a distribution (sum {s})",
                        self.variables[v].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the CPT row selected by an assignment of all variables.
    pub fn config_index(&self, v: usize, assignment: &[usize]) -> usize {
        self.parents[v]
            .iter()
            .fold(0, |acc, p| acc * self.cardinality(*p) + assignment[*p])
    }

    pub fn prob(&self, v: usize, assignment: &[usize]) -> f64 {
        let card = self.cardinality(v);
        self.cpts[v][self.config_index(v, assignment) * card + assignment[v]]
    }

    /// The CPT of `v` as a factor over `[parents.., v]`.
    pub fn factor(&self, v: usize) -> Factor {
        let mut vars = self.parents[v].clone();
        vars.push(v);
        let cards = vars.iter().map(|x| self.cardinality(*x)).collect();
        Factor::new(vars, cards, self.cpts[v].clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: BayesNet = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }
}

/// Kahn ordering; `None` when the parent lists contain a cycle.
pub fn topological_order(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (v, ps) in parents.iter().enumerate() {
        for p in ps {
            children[*p].push(v);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|v| indeg[*v] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for c in &children[v] {
            indeg[*c] -= 1;
            if indeg[*c] == 0 {
                ready.push(*c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Laplace-smoothed maximum likelihood: `(count + 1) / (total + card)`.
/// Unseen parent configurations get uniform rows.
pub fn fit_cpts(variables: &[DiscreteVariable], parents: &[Vec<usize>], data: &DiscreteData) -> Result<BayesNet> {
    if topological_order(parents).is_none() {
        return Err(CrnError::Contract("structure has a cycle".into()));
    }
    let cpts = (0..variables.len())
        .map(|v| {
            let cols: Vec<(&[usize], usize)> = parents[v]
                .iter()
                .map(|p| (data.columns[*p].as_slice(), variables[*p].cardinality))
                .collect();
            laplace_cpt(&data.columns[v], variables[v].cardinality, &cols)
        })
        .collect();
    BayesNet::new(variables.to_vec(), parents.to_vec(), cpts)
}

/// Laplace-smoothed CPT of `child` given parent columns (first parent most
/// significant in the row index).
pub fn laplace_cpt(child: &[usize], card: usize, parents: &[(&[usize], usize)]) -> Vec<f64> {
    let q: usize = parents.iter().map(|(_, c)| *c).product();
    let mut counts = vec![0.0f64; q * card];
    for (r, x) in child.iter().enumerate() {
        let cfg = parents.iter().fold(0, |acc, (col, c)| acc * c + col[r]);
        counts[cfg * card + x] += 1.0;
    }
    for row in counts.chunks_mut(card) {
        let total: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x = (*x + 1.0) / (total + card as f64);
        }
    }
    counts
}
