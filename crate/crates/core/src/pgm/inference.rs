//! Exact posterior queries: variable elimination, plus a full-joint
//! enumeration used as a reference oracle.

use std::collections::BTreeMap;

use super::factor::Factor;
use super::network::BayesNet;
use crate::error::{CrnError, Result};

pub type Evidence = BTreeMap<usize, usize>;

/// Largest joint state space the enumeration oracle accepts.
pub const ORACLE_STATE_LIMIT: u128 = 1 << 20;

fn check_query(net: &BayesNet, evidence: &Evidence, query: usize) -> Result<()> {
    if query >= net.len() {
        return Err(CrnError::Contract(format!("query variable {query} does not exist")));
    }
    if evidence.contains_key(&query) {
        return Err(CrnError::Contract("query variable is part of the evidence".into()));
    }
    for (v, x) in evidence {
        if *v >= net.len() {
            return Err(CrnError::Contract(format!("evidence variable {v} does not exist")));
        }
        if *x >= net.cardinality(*v) {
            return Err(CrnError::Contract(format!(
                "evidence value {x} out of range for `{}`",
                net.variables[*v].name
            )));
        }
    }
    Ok(())
}

pub(crate) fn normalized(f: &Factor) -> Result<Vec<f64>> {
    let z = f.total();
    if !(z > 0.0) {
        return Err(CrnError::ZeroProbability);
    }
    Ok(f.values().iter().map(|v| v / z).collect())
}

/// Multiplies the factors mentioning `var`, sums it out, and puts the result back.
fn eliminate(factors: &mut Vec<Factor>, var: usize) {
    let (with, without): (Vec<Factor>, Vec<Factor>) = factors.drain(..).partition(|f| f.contains(var));
    *factors = without;
    if let Some(prod) = with.into_iter().reduce(|a, b| a.product(&b)) {
        factors.push(prod.sum_out(var));
    }
}

/// Eliminates every variable in `hidden`, in greedy min-weight order.
pub(crate) fn eliminate_all(factors: &mut Vec<Factor>, mut hidden: Vec<usize>) {
    while !hidden.is_empty() {
        let v = next_variable(factors, &hidden);
        hidden.retain(|h| *h != v);
        eliminate(factors, v);
    }
}

/// Greedy min-weight elimination order: repeatedly pick the variable whose
/// elimination creates the smallest factor; ties go to the lowest index.
fn next_variable(factors: &[Factor], candidates: &[usize]) -> usize {
    let mut best = (usize::MAX, usize::MAX);
    for &v in candidates {
        let mut scope: BTreeMap<usize, usize> = BTreeMap::new();
        for f in factors.iter().filter(|f| f.contains(v)) {
            for &u in f.vars() {
                scope.insert(u, f.card_of(u).unwrap_or(1));
            }
        }
        let weight = scope.values().product::<usize>();
        if weight < best.0 {
            best = (weight, v);
        }
    }
    best.1
}

/// Posterior of `query` given `evidence` by variable elimination.
pub fn infer(net: &BayesNet, evidence: &Evidence, query: usize) -> Result<Vec<f64>> {
    check_query(net, evidence, query)?;
    let mut factors: Vec<Factor> = (0..net.len())
        .map(|v| {
            evidence
                .iter()
                .fold(net.factor(v), |f, (ev, x)| f.reduce(*ev, *x))
        })
        .collect();
    let hidden: Vec<usize> = (0..net.len())
        .filter(|v| *v != query && !evidence.contains_key(v))
        .collect();
    eliminate_all(&mut factors, hidden);
    let joint = factors
        .into_iter()
        .reduce(|a, b| a.product(&b))
        .unwrap_or_else(|| Factor::scalar(1.0));
    if joint.vars() != [query] {
        return Err(CrnError::Contract("query variable vanished during elimination".into()));
    }
    normalized(&joint)
}

/// Posterior of `query` by summing the full joint distribution.
pub fn brute_force_joint(net: &BayesNet, evidence: &Evidence, query: usize) -> Result<Vec<f64>> {
    check_query(net, evidence, query)?;
    let states: u128 = net.variables.iter().map(|v| v.cardinality as u128).product();
    if states > ORACLE_STATE_LIMIT {
        return Err(CrnError::OracleLimit(states));
    }
    let n = net.len();
    let mut acc = vec![0.0; net.cardinality(query)];
    let mut assignment = vec![0usize; n];
    'outer: loop {
        if evidence.iter().all(|(v, x)| assignment[*v] == *x) {
            let p: f64 = (0..n).map(|v| net.prob(v, &assignment)).product();
            acc[assignment[query]] += p;
        }
        for k in (0..n).rev() {
            assignment[k] += 1;
            if assignment[k] < net.cardinality(k) {
                continue 'outer;
            }
            assignment[k] = 0;
        }
        break;
    }
    let z: f64 = acc.iter().sum();
    if !(z > 0.0) {
        return Err(CrnError::ZeroProbability);
    }
    Ok(acc.into_iter().map(|a| a / z).collect())
}

#[cfg(test)]
mod tests {
    use crate::pgm::random::random_net;
    use super::*;
    use crate::pgm::network::DiscreteVariable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_pair() -> BayesNet {
        let vars = vec![DiscreteVariable::categorical("a", 2), DiscreteVariable::categorical("b", 3)];
        BayesNet::new(vars, vec![vec![], vec![0]], vec![vec![0.5, 0.5], vec![1.0 / 3.0; 6]]).unwrap()
    }

    #[test]
    fn uniform_cpts_give_uniform_posterior() {
        let net = uniform_pair();
        let ev = Evidence::from([(0, 1)]);
        for p in infer(&net, &ev, 1).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        for p in brute_force_joint(&net, &ev, 1).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_child_is_point_mass() {
        let vars = vec![DiscreteVariable::categorical("a", 2), DiscreteVariable::categorical("b", 2)];
        let net = BayesNet::new(vars, vec![vec![], vec![0]], vec![vec![0.4, 0.6], vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(infer(&net, &Evidence::from([(0, 1)]), 1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(brute_force_joint(&net, &Evidence::from([(0, 1)]), 1).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn impossible_evidence_is_an_error() {
        let vars = vec![DiscreteVariable::categorical("a", 2), DiscreteVariable::categorical("b", 2)];
        let net = BayesNet::new(vars, vec![vec![], vec![0]], vec![vec![1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(infer(&net, &Evidence::from([(1, 1)]), 0), Err(CrnError::ZeroProbability)));
        assert!(matches!(brute_force_joint(&net, &Evidence::from([(1, 1)]), 0), Err(CrnError::ZeroProbability)));
    }

    #[test]
    fn query_in_evidence_is_rejected() {
        let net = uniform_pair();
        assert!(infer(&net, &Evidence::from([(1, 0)]), 1).is_err());
    }

    #[test]
    fn oracle_refuses_huge_state_space() {
        let n = 21;
        let vars = (0..n).map(|i| DiscreteVariable::categorical(format!("v{i}"), 2)).collect();
        let net = BayesNet::new(vars, vec![vec![]; n], vec![vec![0.5, 0.5]; n]).unwrap();
        assert!(matches!(brute_force_joint(&net, &Evidence::new(), 0), Err(CrnError::OracleLimit(_))));
        assert!(infer(&net, &Evidence::new(), 0).is_ok());
    }

    #[test]
    fn random_eight_node_nets_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let net = random_net(&mut rng, 8, 3, 3);
            let query = rng.random_range(0..8);
            let mut ev = Evidence::new();
            for v in 0..8 {
                if v != query && rng.random_bool(0.4) {
                    ev.insert(v, rng.random_range(0..net.cardinality(v)));
                }
            }
            let a = infer(&net, &ev, query).unwrap();
            let b = brute_force_joint(&net, &ev, query).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }
}
