//! Upper bounds on the Bayes error rate of a representation, and a
//! closed-form Gaussian channel used as an analytic oracle.

use serde::Serialize;

use super::measures::{conditional_mi, entropy, interaction_info};
use super::{InfoError, JointDistribution};

/// `Gamma(x) = min(max(x, 0), 1 - 1/|T|)`: clamps a bound into the range a
/// Bayes error rate can take for `|T|` classes.
pub fn threshold(x: f64, cardinality_t: usize) -> f64 {
    let hi = 1.0 - 1.0 / cardinality_t as f64;
    x.max(0.0).min(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BayesBoundReport {
    pub entropy_t: f64,
    /// Bound for an arbitrary representation.
    pub eq9_bound: f64,
    /// Bound for a sufficient representation.
    pub eq10_bound: f64,
    /// Bound for the minimal sufficient representation.
    pub eq11_bound: f64,
    pub cardinality_t: usize,
}

/// Bayes-error upper bounds for predicting `t` from `z1`, with all three
/// clamped by [`threshold`]:
///
/// * arbitrary `z1`: `1 - exp(-(H(T) - I(z1;T|v2) - I(z1;v2;T)))`
/// * sufficient `z1`: `1 - exp(-(H(T) - I(z1;T|v2) - I(v1;v2;T)))`
/// * minimal sufficient: `1 - exp(-(H(T) - I(v1;v2;T)))`
pub fn bayes_bounds(
    joint: &JointDistribution,
    v1: &[&str],
    v2: &[&str],
    z1: &[&str],
    t: &[&str],
) -> Result<BayesBoundReport, InfoError> {
    let t_idx = joint.resolve(t)?;
    let card = joint.size_of(&t_idx);
    if card < 2 {
        return Err(InfoError::InvalidArgument(format!(
            "target needs at least 2 classes, got {card}"
        )));
    }
    let h_t = entropy(joint, t)?;
    let z_t_given_v2 = conditional_mi(joint, z1, t, v2)?;
    let z_v2_t = interaction_info(joint, z1, v2, t)?;
    let v1_v2_t = interaction_info(joint, v1, v2, t)?;
    let bound = |exponent: f64| threshold(1.0 - (-exponent).exp(), card);
    Ok(BayesBoundReport {
        entropy_t: h_t,
        eq9_bound: bound(h_t - z_t_given_v2 - z_v2_t),
        eq10_bound: bound(h_t - z_t_given_v2 - v1_v2_t),
        eq11_bound: bound(h_t - v1_v2_t),
        cardinality_t: card,
    })
}

/// Exact `I(v; z)` for `z = w v + e`, `v ~ N(0, 1)`, `e ~ N(0, s^2)`:
/// `0.5 ln(1 + w^2 / s^2)`.
pub fn gaussian_linear_mi(weight: f64, noise_std: f64) -> Result<f64, InfoError> {
    if !(noise_std > 0.0) {
        return Err(InfoError::InvalidArgument(format!(
            "noise std must be > 0, got {noise_std}"
        )));
    }
    Ok(0.5 * (weight * weight / (noise_std * noise_std)).ln_1p())
}
