//! Exact entropies and mutual informations, in nats.

use serde::Serialize;

use super::{InfoError, JointDistribution};

/// Values more negative than this indicate a broken table, not roundoff.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

fn plogp_ratio(p: f64, num: f64, den: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (num / den).ln()
    }
}

fn disjoint(joint: &JointDistribution, sets: &[&[&str]]) -> Result<Vec<Vec<usize>>, InfoError> {
    let resolved: Vec<Vec<usize>> = sets
        .iter()
        .map(|s| joint.resolve(s))
        .collect::<Result<_, _>>()?;
    for (i, a) in resolved.iter().enumerate() {
        for b in &resolved[i + 1..] {
            if let Some(&shared) = a.iter().find(|x| b.contains(x)) {
                return Err(InfoError::OverlappingSets(
                    joint.variables()[shared].name.clone(),
                ));
            }
        }
    }
    Ok(resolved)
}

fn clamp_information(value: f64, what: &'static str) -> Result<f64, InfoError> {
    if value < -NEGATIVE_TOLERANCE {
        return Err(InfoError::NegativeInformation { what, value });
    }
    Ok(value.max(0.0))
}

/// `H(S) = -sum p log p` over the marginal of `subset`.
pub fn entropy(joint: &JointDistribution, subset: &[&str]) -> Result<f64, InfoError> {
    let idx = joint.resolve(subset)?;
    let h: f64 = joint
        .marginal(&idx)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(h.max(0.0))
}

/// `I(A;B) = sum p(a,b) log p(a,b) / (p(a) p(b))`.
pub fn mutual_info(joint: &JointDistribution, a: &[&str], b: &[&str]) -> Result<f64, InfoError> {
    let sets = disjoint(joint, &[a, b])?;
    let (ia, ib) = (&sets[0], &sets[1]);
    let ab: Vec<usize> = ia.iter().chain(ib).copied().collect();
    let p_ab = joint.marginal(&ab);
    let p_a = joint.marginal(ia);
    let p_b = joint.marginal(ib);
    let nb = p_b.len();
    let mut total = 0.0;
    for (x, &pa) in p_a.iter().enumerate() {
        for (y, &pb) in p_b.iter().enumerate() {
            let p = p_ab[x * nb + y];
            total += plogp_ratio(p, p, pa * pb);
        }
    }
    clamp_information(total, "mutual information")
}

/// `I(A;B|C) = sum_c p(c) I(A;B | C=c)`, evaluated as
/// `sum p(a,b,c) log p(a,b,c) p(c) / (p(a,c) p(b,c))`.
pub fn conditional_mi(
    joint: &JointDistribution,
    a: &[&str],
    b: &[&str],
    c: &[&str],
) -> Result<f64, InfoError> {
    let sets = disjoint(joint, &[a, b, c])?;
    let (ia, ib, ic) = (&sets[0], &sets[1], &sets[2]);
    let cat = |parts: &[&Vec<usize>]| -> Vec<usize> {
        parts.iter().flat_map(|p| p.iter().copied()).collect()
    };
    let p_abc = joint.marginal(&cat(&[ia, ib, ic]));
    let p_ac = joint.marginal(&cat(&[ia, ic]));
    let p_bc = joint.marginal(&cat(&[ib, ic]));
    let p_c = joint.marginal(ic);
    let (na, nb, nc) = (joint.size_of(ia), joint.size_of(ib), joint.size_of(ic));
    let mut total = 0.0;
    for x in 0..na {
        for y in 0..nb {
            for z in 0..nc {
                let p = p_abc[(x * nb + y) * nc + z];
                total += plogp_ratio(p, p * p_c[z], p_ac[x * nc + z] * p_bc[y * nc + z]);
            }
        }
    }
    clamp_information(total, "conditional mutual information")
}

/// Three-way interaction information `I(A;B;C) = I(B;C) - I(B;C|A)`.
/// May be negative.
pub fn interaction_info(
    joint: &JointDistribution,
    a: &[&str],
    b: &[&str],
    c: &[&str],
) -> Result<f64, InfoError> {
    disjoint(joint, &[a, b, c])?;
    Ok(mutual_info(joint, b, c)? - conditional_mi(joint, b, c, a)?)
}

/// Split of `I(input; repr)` into what `repr` shares with `other` and what it
/// keeps beyond it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecompositionReport {
    /// `I(input; repr)`
    pub total: f64,
    /// `I(other; repr)`
    pub predictive: f64,
    /// `I(input; repr | other)`
    pub superfluous: f64,
    /// `|total - predictive - superfluous|`
    pub residual: f64,
}

/// Evaluates `I(input; repr) = I(other; repr) + I(input; repr | other)`.
///
/// The identity holds when `repr` depends on `other` only through `input`;
/// otherwise the violation shows up in `residual`.
pub fn decompose_predictive_superfluous(
    joint: &JointDistribution,
    input: &[&str],
    other: &[&str],
    repr: &[&str],
) -> Result<DecompositionReport, InfoError> {
    disjoint(joint, &[input, other, repr])?;
    let total = mutual_info(joint, input, repr)?;
    let predictive = mutual_info(joint, other, repr)?;
    let superfluous = conditional_mi(joint, input, repr, other)?;
    Ok(DecompositionReport {
        total,
        predictive,
        superfluous,
        residual: (total - predictive - superfluous).abs(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SufficiencyReport {
    pub is_sufficient: bool,
    /// `I(v1; v2) - I(z1; v2)`
    pub gap: f64,
}

/// `z1` is sufficient of `v1` for `v2` when `I(z1; v2) = I(v1; v2)`.
pub fn sufficiency_check(
    joint: &JointDistribution,
    v1: &[&str],
    v2: &[&str],
    z1: &[&str],
    tol: f64,
) -> Result<SufficiencyReport, InfoError> {
    disjoint(joint, &[v1, v2, z1])?;
    let gap = mutual_info(joint, v1, v2)? - mutual_info(joint, z1, v2)?;
    Ok(SufficiencyReport {
        is_sufficient: gap <= tol,
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::Variable;

    fn var(name: &str, card: usize) -> Variable {
        Variable::new(name, card)
    }

    #[test]
    fn entropy_anchors() {
        let coin = JointDistribution::new(vec![var("x", 2)], vec![0.5, 0.5]).unwrap();
        assert!((entropy(&coin, &["x"]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let det = JointDistribution::new(vec![var("x", 3)], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy(&det, &["x"]).unwrap(), 0.0);
        let skew = JointDistribution::new(vec![var("x", 3)], vec![0.5, 0.25, 0.25]).unwrap();
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25)
        let oracle = -(0.5 * 0.5f64.ln() + 0.5 * 0.25f64.ln());
        assert!((oracle - 1.039721).abs() < 1e-6);
        assert!((entropy(&skew, &["x"]).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn mutual_info_anchors() {
        let indep =
            JointDistribution::new(vec![var("a", 2), var("b", 2)], vec![0.25; 4]).unwrap();
        assert!(mutual_info(&indep, &["a"], &["b"]).unwrap().abs() < 1e-15);
        let copy = JointDistribution::new(vec![var("a", 2), var("b", 2)], vec![0.5, 0.0, 0.0, 0.5])
            .unwrap();
        assert!(
            (mutual_info(&copy, &["a"], &["b"]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15
        );
        let bsc =
            JointDistribution::new(vec![var("a", 2), var("b", 2)], vec![0.45, 0.05, 0.05, 0.45])
                .unwrap();
        // Brute force over the four outcomes.
        let oracle: f64 = [0.45f64, 0.05, 0.05, 0.45]
            .iter()
            .map(|&p| p * (p / 0.25).ln())
            .sum();
        assert!((oracle - 0.368064).abs() < 1e-6);
        assert!((mutual_info(&bsc, &["a"], &["b"]).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn overlapping_sets_are_rejected() {
        let j = JointDistribution::new(vec![var("a", 2), var("b", 2)], vec![0.25; 4]).unwrap();
        assert!(matches!(
            mutual_info(&j, &["a"], &["a", "b"]),
            Err(InfoError::OverlappingSets(_))
        ));
        assert!(matches!(
            conditional_mi(&j, &["a"], &["b"], &["b"]),
            Err(InfoError::OverlappingSets(_))
        ));
        assert!(matches!(entropy(&j, &[]), Err(InfoError::EmptySet)));
    }

    fn xor_triple() -> JointDistribution {
        JointDistribution::from_fn(vec![var("x", 2), var("y", 2), var("z", 2)], |o| {
            if o[2] == o[0] ^ o[1] {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn interaction_info_anchors() {
        let indep =
            JointDistribution::new(vec![var("x", 2), var("y", 2), var("z", 2)], vec![0.125; 8])
                .unwrap();
        assert!(interaction_info(&indep, &["x"], &["y"], &["z"]).unwrap().abs() < 1e-15);

        let ln2 = std::f64::consts::LN_2;
        let xor = xor_triple();
        assert!((interaction_info(&xor, &["x"], &["y"], &["z"]).unwrap() + ln2).abs() < 1e-14);

        let same = JointDistribution::from_fn(vec![var("x", 2), var("y", 2), var("z", 2)], |o| {
            if o[0] == o[1] && o[1] == o[2] {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert!((interaction_info(&same, &["x"], &["y"], &["z"]).unwrap() - ln2).abs() < 1e-14);
    }

    #[test]
    fn markov_chain_has_no_conditional_information() {
        let x = JointDistribution::new(vec![var("x", 3)], vec![0.2, 0.3, 0.5]).unwrap();
        let xy = x
            .with_conditional(var("y", 2), |o| vec![1.0 + o[0] as f64, 2.0])
            .unwrap();
        let xyz = xy
            .with_conditional(var("z", 3), |o| vec![1.0, 3.0 * o[1] as f64 + 0.5, 2.0])
            .unwrap();
        assert!(conditional_mi(&xyz, &["x"], &["z"], &["y"]).unwrap() < 1e-15);
    }

    #[test]
    fn irrelevant_conditioner() {
        let ab = JointDistribution::new(vec![var("a", 2), var("b", 2)], vec![0.4, 0.1, 0.2, 0.3])
            .unwrap();
        let abc = ab
            .with_conditional(var("c", 3), |_| vec![0.2, 0.5, 0.3])
            .unwrap();
        let cmi = conditional_mi(&abc, &["a"], &["b"], &["c"]).unwrap();
        let mi = mutual_info(&ab, &["a"], &["b"]).unwrap();
        assert!((cmi - mi).abs() < 1e-14);
    }

    #[test]
    fn decomposition_anchors() {
        let v = JointDistribution::new(vec![var("x", 4)], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let copies = v
            .with_function(var("other", 4), |o| o[0])
            .unwrap()
            .with_function(var("z", 4), |o| o[0])
            .unwrap();
        let r = decompose_predictive_superfluous(&copies, &["x"], &["other"], &["z"]).unwrap();
        let h = entropy(&copies, &["x"]).unwrap();
        assert!((r.predictive - h).abs() < 1e-14);
        assert!(r.superfluous.abs() < 1e-14);
        assert!(r.residual < 1e-14);

        let constant = v
            .with_function(var("other", 4), |o| o[0])
            .unwrap()
            .with_function(var("z", 1), |_| 0)
            .unwrap();
        let r = decompose_predictive_superfluous(&constant, &["x"], &["other"], &["z"]).unwrap();
        assert_eq!((r.total, r.predictive, r.superfluous), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sufficiency_anchors() {
        let v = JointDistribution::new(vec![var("v1", 2), var("v2", 2)], vec![0.4, 0.1, 0.1, 0.4])
            .unwrap();
        let identity = v.with_function(var("z1", 2), |o| o[0]).unwrap();
        let r = sufficiency_check(&identity, &["v1"], &["v2"], &["z1"], 1e-10).unwrap();
        assert!(r.is_sufficient && r.gap.abs() < 1e-14);

        let constant = v.with_function(var("z1", 1), |_| 0).unwrap();
        let r = sufficiency_check(&constant, &["v1"], &["v2"], &["z1"], 1e-10).unwrap();
        assert!(!r.is_sufficient && r.gap > 0.1);
    }
}
