//! Numerical identity suites over random discrete joints, plus the Gaussian
//! channel bound check. Each suite reports the largest residual it saw.

use serde::Serialize;

use crate::info::random::{random_joint, random_simplex, with_random_channel, with_random_function};
use crate::info::{
    bayes_bounds, conditional_mi, decompose_predictive_superfluous, gaussian_linear_mi,
    interaction_info, mutual_info, sufficiency_check, InfoError, JointDistribution, Variable,
};
use crate::loss::gaussian_kl;
use crate::tensor::{Rng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    /// One line per suite.
    pub fn render(&self) -> String {
        self.suites
            .iter()
            .map(|s| {
                format!(
                    "{:<28} {} cases={:<4} max_residual={:.3e} tol={:.0e}\n",
                    s.name,
                    if s.passed { "PASS" } else { "FAIL" },
                    s.cases,
                    s.max_residual,
                    s.tolerance
                )
            })
            .collect()
    }
}

struct Suite {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    max_residual: f64,
}

impl Suite {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            max_residual: 0.0,
        }
    }

    fn observe(&mut self, residual: f64) {
        self.cases += 1;
        // NaN must fail the suite.
        if !(residual <= self.max_residual) {
            self.max_residual = if residual.is_nan() { f64::INFINITY } else { residual };
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            cases: self.cases,
            max_residual: self.max_residual,
            tolerance: self.tolerance,
            passed: self.max_residual <= self.tolerance,
        }
    }
}

fn card(rng: &mut Rng) -> usize {
    2 + rng.below(7)
}

fn sparsity(rng: &mut Rng) -> f64 {
    if rng.bernoulli(0.5) {
        0.0
    } else {
        0.3
    }
}

/// Random joint over `a`, `b`, `c` with up to 8 states each.
fn triple(rng: &mut Rng) -> Result<JointDistribution, InfoError> {
    let cards = [card(rng), card(rng), card(rng)];
    let sp = sparsity(rng);
    random_joint(rng, &[("a", cards[0]), ("b", cards[1]), ("c", cards[2])], sp)
}

/// `(v1, v2)` random, `z1` drawn from a random channel of `v1` alone.
fn views_with_repr(rng: &mut Rng, deterministic: bool) -> Result<JointDistribution, InfoError> {
    let (c1, c2, cz) = (card(rng), card(rng), card(rng));
    let sp = sparsity(rng);
    let j = random_joint(rng, &[("v1", c1), ("v2", c2)], sp)?;
    if deterministic {
        with_random_function(rng, &j, "z1", cz, &[0])
    } else {
        let sp = sparsity(rng);
        with_random_channel(rng, &j, "z1", cz, &[0], sp)
    }
}

/// Views `v1 = (s, n1)` and `v2 = (s, n2)` with `n1`, `n2` independent given
/// the shared part `s`; a target `t` depending on all three; and
/// `z1 = (s, m(n1))` for a random map `m`, which keeps all of `s` and is
/// therefore sufficient.
pub fn sufficient_joint(rng: &mut Rng) -> Result<JointDistribution, InfoError> {
    let s_card = 2 + rng.below(3);
    let n1_card = 1 + rng.below(4);
    let n2_card = 1 + rng.below(4);
    let t_card = 2 + rng.below(4);
    let p_s = random_simplex(rng, s_card, 0.0);
    let p_n1: Vec<Vec<f64>> = (0..s_card).map(|_| random_simplex(rng, n1_card, 0.2)).collect();
    let p_n2: Vec<Vec<f64>> = (0..s_card).map(|_| random_simplex(rng, n2_card, 0.2)).collect();
    let p_t: Vec<Vec<f64>> = (0..s_card * n1_card * n2_card)
        .map(|_| random_simplex(rng, t_card, 0.2))
        .collect();
    let private_map: Vec<usize> = (0..n1_card).map(|_| rng.below(n1_card)).collect();
    let vars = vec![
        Variable::new("v1", s_card * n1_card),
        Variable::new("v2", s_card * n2_card),
        Variable::new("t", t_card),
    ];
    JointDistribution::from_fn(vars, |o| {
        let (s, n1) = (o[0] / n1_card, o[0] % n1_card);
        let (s2, n2) = (o[1] / n2_card, o[1] % n2_card);
        if s != s2 {
            return 0.0;
        }
        p_s[s] * p_n1[s][n1] * p_n2[s][n2] * p_t[(s * n1_card + n1) * n2_card + n2][o[2]]
    })?
    .with_function(Variable::new("z1", s_card * n1_card), |o| {
        (o[0] / n1_card) * n1_card + private_map[o[0] % n1_card]
    })
}

/// Expected KL from `N(w v, s^2)` to `N(0, 1)` over `v = +-1`, which equals the
/// expectation under `v ~ N(0, 1)` because the KL is quadratic in the mean.
pub fn linear_gaussian_kl_bound(w: f64, s: f64) -> Result<f64, crate::tensor::TensorError> {
    let mut tape = Tape::<f64>::new();
    let mu = tape.constant(Tensor::from_f64(vec![2, 1], &[w, -w])?);
    let lv = (s * s).ln();
    let logvar = tape.constant(Tensor::from_f64(vec![2, 1], &[lv, lv])?);
    let kl = gaussian_kl(&mut tape, mu, logvar)?;
    tape.scalar_value(kl)
}

fn abs_diff(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

/// Runs every suite with `trials` random cases each.
pub fn run_mi_checks(trials: usize, seed: u64) -> Result<CheckReport, InfoError> {
    let mut report = CheckReport::default();

    let mut sym = Suite::new("symmetry", 1e-12);
    let mut nonneg = Suite::new("non-negativity", 1e-12);
    let mut chain = Suite::new("chain rule", 1e-10);
    let mut inter = Suite::new("interaction symmetry", 1e-10);
    let mut rng = Rng::substream(seed, "properties");
    for _ in 0..trials {
        let j = triple(&mut rng)?;
        sym.observe(abs_diff(
            mutual_info(&j, &["a"], &["b"])?,
            mutual_info(&j, &["b"], &["a"])?,
        ));
        let i_ab = mutual_info(&j, &["a"], &["b"])?;
        let i_ab_c = conditional_mi(&j, &["a"], &["b"], &["c"])?;
        nonneg.observe((-i_ab).max(-i_ab_c).max(0.0));
        let lhs = mutual_info(&j, &["a", "b"], &["c"])?;
        let rhs = mutual_info(&j, &["b"], &["c"])? + conditional_mi(&j, &["a"], &["c"], &["b"])?;
        chain.observe(abs_diff(lhs, rhs));
        let abc = interaction_info(&j, &["a"], &["b"], &["c"])?;
        let other = mutual_info(&j, &["a"], &["c"])? - conditional_mi(&j, &["a"], &["c"], &["b"])?;
        let third = interaction_info(&j, &["c"], &["a"], &["b"])?;
        inter.observe(abs_diff(abc, other).max(abs_diff(abc, third)));
    }
    report.suites.extend([sym.finish(), nonneg.finish(), chain.finish(), inter.finish()]);

    let mut label = Suite::new("label decomposition", 1e-10);
    let mut view = Suite::new("view decomposition", 1e-10);
    let mut dpi = Suite::new("data processing", 1e-10);
    let mut rng = Rng::substream(seed, "decomposition");
    for _ in 0..trials {
        // Supervised roles: input x, label y, representation z drawn from x.
        let (cx, cy, cz) = (card(&mut rng), card(&mut rng), card(&mut rng));
        let sp = sparsity(&mut rng);
        let j = random_joint(&mut rng, &[("x", cx), ("y", cy)], sp)?;
        let j = with_random_channel(&mut rng, &j, "z", cz, &[0], sp)?;
        label.observe(decompose_predictive_superfluous(&j, &["x"], &["y"], &["z"])?.residual);

        let deterministic = rng.bernoulli(0.5);
        let j = views_with_repr(&mut rng, deterministic)?;
        view.observe(decompose_predictive_superfluous(&j, &["v1"], &["v2"], &["z1"])?.residual);

        let j = views_with_repr(&mut rng, true)?;
        let excess = mutual_info(&j, &["z1"], &["v2"])? - mutual_info(&j, &["v1"], &["v2"])?;
        dpi.observe(excess.max(0.0));
    }
    report.suites.extend([label.finish(), view.finish(), dpi.finish()]);

    let mut suff = Suite::new("sufficiency of shared part", 1e-10);
    let mut order = Suite::new("bound ordering", 1e-10);
    let mut rng = Rng::substream(seed, "bayes");
    for _ in 0..trials {
        let j = sufficient_joint(&mut rng)?;
        suff.observe(sufficiency_check(&j, &["v1"], &["v2"], &["z1"], 1e-10)?.gap.abs());
        let b = bayes_bounds(&j, &["v1"], &["v2"], &["z1"], &["t"])?;
        order.observe((b.eq10_bound - b.eq11_bound).max(0.0));
    }
    report.suites.extend([suff.finish(), order.finish()]);

    let mut kl = Suite::new("Gaussian KL bound", 1e-6);
    let mut rng = Rng::substream(seed, "gaussian");
    for _ in 0..trials {
        let w = rng.uniform(-3.0, 3.0);
        let s = rng.uniform(0.2, 2.0);
        let bound = linear_gaussian_kl_bound(w, s)
            .map_err(|e| InfoError::InvalidArgument(e.to_string()))?;
        kl.observe((gaussian_linear_mi(w, s)? - bound).max(0.0));
    }
    report.suites.push(kl.finish());
    Ok(report)
}

/// The four identity suites of [`run_mi_checks`] on a user-supplied joint,
/// over every ordered triple of distinct variables (every pair when there
/// are only two).
pub fn check_joint(joint: &JointDistribution) -> Result<CheckReport, InfoError> {
    let names: Vec<&str> = joint.variables().iter().map(|v| v.name.as_str()).collect();
    let mut sym = Suite::new("symmetry", 1e-12);
    let mut nonneg = Suite::new("non-negativity", 1e-12);
    let mut chain = Suite::new("chain rule", 1e-10);
    let mut inter = Suite::new("interaction symmetry", 1e-10);
    for (i, a) in names.iter().enumerate() {
        for (k, b) in names.iter().enumerate() {
            if i == k {
                continue;
            }
            let (a, b) = ([*a], [*b]);
            sym.observe(abs_diff(mutual_info(joint, &a, &b)?, mutual_info(joint, &b, &a)?));
            nonneg.observe((-mutual_info(joint, &a, &b)?).max(0.0));
            for (m, c) in names.iter().enumerate() {
                if m == i || m == k {
                    continue;
                }
                let c = [*c];
                nonneg.observe((-conditional_mi(joint, &a, &b, &c)?).max(0.0));
                let lhs = mutual_info(joint, &[a[0], b[0]], &c)?;
                let rhs = mutual_info(joint, &b, &c)? + conditional_mi(joint, &a, &c, &b)?;
                chain.observe(abs_diff(lhs, rhs));
                let x = interaction_info(joint, &a, &b, &c)?;
                let y = mutual_info(joint, &a, &c)? - conditional_mi(joint, &a, &c, &b)?;
                inter.observe(abs_diff(x, y));
            }
        }
    }
    Ok(CheckReport {
        suites: vec![sym.finish(), nonneg.finish(), chain.finish(), inter.finish()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suites_pass() {
        let r = run_mi_checks(100, 0).unwrap();
        assert!(r.all_passed(), "{}", r.render());
        assert_eq!(r.suites.len(), 10);
        assert!(r.suites.iter().all(|s| s.cases == 100));
    }

    #[test]
    fn report_is_deterministic() {
        assert_eq!(run_mi_checks(1, 5).unwrap().render(), run_mi_checks(1, 5).unwrap().render());
    }

    #[test]
    fn nan_residual_fails() {
        let mut s = Suite::new("x", 1.0);
        s.observe(f64::NAN);
        assert!(!s.finish().passed);
    }

    #[test]
    fn shared_part_is_sufficient() {
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..20 {
            let j = sufficient_joint(&mut rng).unwrap();
            assert!(sufficiency_check(&j, &["v1"], &["v2"], &["z1"], 1e-10).unwrap().is_sufficient);
        }
    }

    #[test]
    fn user_joint_suites() {
        let j = random_joint(&mut Rng::seed_from_u64(1), &[("a", 3), ("b", 2), ("c", 4), ("d", 2)], 0.1).unwrap();
        let r = check_joint(&j).unwrap();
        assert!(r.all_passed(), "{}", r.render());
        assert_eq!(r.suites[2].cases, 24);
    }
}
