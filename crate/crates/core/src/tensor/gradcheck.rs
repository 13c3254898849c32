use super::{Element, Tape, Tensor, TensorError, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of
    /// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a relu or clamp kink.
    pub skipped: usize,
    /// `(parameter index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Checks the gradient of a scalar function built on a tape.
///
/// `f` receives a fresh `f64` tape and one leaf per parameter and returns the
/// scalar output. Each coordinate is perturbed by `+-eps`; a coordinate is
/// skipped when either perturbed pass lands on a different side of a relu or
/// clamp kink than the unperturbed pass.
pub fn finite_diff_check<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    if !(eps > 0.0) {
        return Err(TensorError::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.scalar_value(out)?;
    if !base.is_finite() {
        return Err(TensorError::NonFinite(base));
    }
    let pattern = tape.kink_pattern();
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<(f64, Vec<bool>), TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.param(p.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.scalar_value(o)?;
        if !v.is_finite() {
            return Err(TensorError::NonFinite(v));
        }
        Ok((v, t.kink_pattern()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every param has a gradient");
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let (fp, pat_p) = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let (fm, pat_m) = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            if pat_p != pattern || pat_m != pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[ci].as_f64();
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, ci));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::from_rows(&[vec![0.3, -1.2, 2.5]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, -3.0]]).unwrap();
        let report = finite_diff_check(
            |t, p| {
                let wc = t.constant(w.clone());
                let y = t.mul(p[0], wc)?;
                t.sum(y)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-9, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn relu_kink_coordinates_are_skipped() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0, -2.0]]).unwrap();
        let report = finite_diff_check(
            |t, p| {
                let r = t.relu(p[0])?;
                t.sum(r)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error <= 1e-9);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let x = Tensor::scalar(1000.0);
        let err = finite_diff_check(|t, p| t.exp(p[0]), &[x], 1e-5).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite(_)));
    }
}
