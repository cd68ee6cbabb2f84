//! Random networks for oracle tests and benchmarks.

use rand::Rng;

use super::dbn::{DbnModel, SliceParent};
use super::network::{BayesNet, DiscreteVariable};

fn shuffled<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    perm
}

/// `q` random distributions over `card` states, bounded away from zero.
fn random_rows<R: Rng>(rng: &mut R, q: usize, card: usize) -> Vec<f64> {
    let mut cpt = Vec::with_capacity(q * card);
    for _ in 0..q {
        let raw: Vec<f64> = (0..card).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        cpt.extend(raw.iter().map(|x| x / s));
    }
    cpt
}

/// Random parent lists over `n` variables: a random DAG whose nodes each
/// have at most `max_parents` parents.
fn random_dag<R: Rng>(rng: &mut R, n: usize, max_parents: usize) -> Vec<Vec<usize>> {
    let perm = shuffled(rng, n);
    let mut parents = vec![Vec::new(); n];
    for j in 0..n {
        for i in 0..j {
            if parents[perm[j]].len() < max_parents && rng.random_bool(0.35) {
                parents[perm[j]].push(perm[i]);
            }
        }
    }
    parents
}

/// Random network over `n` variables with cardinalities in `2..=max_card`.
pub fn random_net<R: Rng>(rng: &mut R, n: usize, max_card: usize, max_parents: usize) -> BayesNet {
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_card)).collect();
    let parents = random_dag(rng, n, max_parents);
    let variables: Vec<DiscreteVariable> = (0..n)
        .map(|v| DiscreteVariable::categorical(format!("v{v}"), cards[v]))
        .collect();
    let cpts = (0..n)
        .map(|v| {
            let q = parents[v].iter().map(|p| cards[*p]).product();
            random_rows(rng, q, cards[v])
        })
        .collect();
    BayesNet::new(variables, parents, cpts).expect("random network is valid")
}

/// Random DBN with `n` variables per slice; the last variable is a binary target.
pub fn random_dbn<R: Rng>(rng: &mut R, n: usize, max_card: usize, window: usize) -> DbnModel {
    let mut prior = random_net(rng, n, max_card, 2);
    let target = n - 1;
    prior.variables[target].cardinality = 2;
    prior.variables[target].name = "direction".into();
    let cards: Vec<usize> = prior.variables.iter().map(|v| v.cardinality).collect();
    prior.cpts = (0..n)
        .map(|v| {
            let q = prior.parents[v].iter().map(|p| cards[*p]).product();
            random_rows(rng, q, cards[v])
        })
        .collect();
    let intra = random_dag(rng, n, 2);
    let transition_parents: Vec<Vec<SliceParent>> = (0..n)
        .map(|v| {
            let mut ps: Vec<SliceParent> = intra[v].iter().map(|p| SliceParent::Current(*p)).collect();
            for i in 0..n {
                if i == v || rng.random_bool(0.3) {
                    ps.push(SliceParent::Previous(i));
                }
            }
            ps
        })
        .collect();
    let transition_cpts = (0..n)
        .map(|v| {
            let q = transition_parents[v]
                .iter()
                .map(|p| match p {
                    SliceParent::Current(i) | SliceParent::Previous(i) => cards[*i],
                })
                .product();
            random_rows(rng, q, cards[v])
        })
        .collect();
    let model = DbnModel {
        variables: prior.variables.clone(),
        target,
        window,
        prior,
        transition_parents,
        transition_cpts,
    };
    model.validate().expect("random DBN is valid");
    model
}
