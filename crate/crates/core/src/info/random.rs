//! Random joint distributions for the identity suites.

use super::{InfoError, JointDistribution, Variable};
use crate::tensor::Rng;

/// Dirichlet(1, ..., 1) weights via normalized exponentials. With
/// probability `sparsity` an entry is forced to zero (at least one survives).
pub fn random_simplex(rng: &mut Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            let e = -(1.0 - rng.next_f64()).ln();
            if rng.bernoulli(sparsity) {
                0.0
            } else {
                e
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let k = rng.below(n);
        w[k] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Random joint over the named variables with the given cardinalities.
pub fn random_joint(
    rng: &mut Rng,
    vars: &[(&str, usize)],
    sparsity: f64,
) -> Result<JointDistribution, InfoError> {
    let vars: Vec<Variable> = vars.iter().map(|(n, c)| Variable::new(*n, *c)).collect();
    let n = vars.iter().map(|v| v.cardinality).product();
    JointDistribution::from_weights(vars, random_simplex(rng, n, sparsity))
}

/// Appends a variable whose distribution depends only on the listed parent
/// variables (indices into the current table), with a random conditional
/// table.
pub fn with_random_channel(
    rng: &mut Rng,
    joint: &JointDistribution,
    name: &str,
    cardinality: usize,
    parents: &[usize],
    sparsity: f64,
) -> Result<JointDistribution, InfoError> {
    let cards = joint.cardinalities();
    let parent_states: usize = parents.iter().map(|&p| cards[p]).product();
    let table: Vec<Vec<f64>> = (0..parent_states)
        .map(|_| random_simplex(rng, cardinality, sparsity))
        .collect();
    joint.with_conditional(Variable::new(name, cardinality), |o| {
        let mut k = 0;
        for &p in parents {
            k = k * cards[p] + o[p];
        }
        table[k].clone()
    })
}

/// Appends a random deterministic function of the listed parents.
pub fn with_random_function(
    rng: &mut Rng,
    joint: &JointDistribution,
    name: &str,
    cardinality: usize,
    parents: &[usize],
) -> Result<JointDistribution, InfoError> {
    let cards = joint.cardinalities();
    let parent_states: usize = parents.iter().map(|&p| cards[p]).product();
    let table: Vec<usize> = (0..parent_states).map(|_| rng.below(cardinality)).collect();
    joint.with_function(Variable::new(name, cardinality), |o| {
        let mut k = 0;
        for &p in parents {
            k = k * cards[p] + o[p];
        }
        table[k]
    })
}
