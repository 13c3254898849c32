use std::collections::HashSet;
use std::fmt::Write as _;

use super::InfoError;

/// Largest cardinality accepted for a single variable.
pub const MAX_CARDINALITY: usize = 16;
/// Largest number of variables in one joint table.
pub const MAX_VARIABLES: usize = 6;
/// Tolerance on the total probability mass of a table.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// Tables read from CSV within this distance of 1 are renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub cardinality: usize,
}

impl Variable {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
        }
    }
}

/// Explicit probability table over named finite variables.
///
/// Outcomes are laid out row-major: the first variable varies slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    vars: Vec<Variable>,
    probs: Vec<f64>,
}

fn validate_vars(vars: &[Variable]) -> Result<(), InfoError> {
    if vars.is_empty() {
        return Err(InfoError::EmptySet);
    }
    if vars.len() > MAX_VARIABLES {
        return Err(InfoError::TooManyVariables(vars.len()));
    }
    let mut seen = HashSet::new();
    for v in vars {
        if v.cardinality == 0 || v.cardinality > MAX_CARDINALITY {
            return Err(InfoError::Cardinality {
                name: v.name.clone(),
                cardinality: v.cardinality,
            });
        }
        if v.name.is_empty() || v.name.contains([',', ':']) {
            return Err(InfoError::InvalidArgument(format!(
                "variable name {:?} must be non-empty without ',' or ':'",
                v.name
            )));
        }
        if !seen.insert(v.name.as_str()) {
            return Err(InfoError::DuplicateVariable(v.name.clone()));
        }
    }
    Ok(())
}

impl JointDistribution {
    /// Builds a table, requiring non-negative entries summing to 1 within
    /// [`SUM_TOLERANCE`].
    pub fn new(vars: Vec<Variable>, probs: Vec<f64>) -> Result<Self, InfoError> {
        validate_vars(&vars)?;
        let expected: usize = vars.iter().map(|v| v.cardinality).product();
        if probs.len() != expected {
            return Err(InfoError::TableLength {
                expected,
                got: probs.len(),
            });
        }
        if let Some(&p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(InfoError::NegativeProbability(p));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(InfoError::NotNormalized { sum });
        }
        Ok(Self { vars, probs })
    }

    /// Builds a table from unnormalized non-negative weights.
    pub fn from_weights(vars: Vec<Variable>, weights: Vec<f64>) -> Result<Self, InfoError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(InfoError::NotNormalized { sum });
        }
        Self::new(vars, weights.into_iter().map(|w| w / sum).collect())
    }

    /// Builds a table by evaluating `weight(outcome)` on every outcome, then
    /// normalizing.
    pub fn from_fn(
        vars: Vec<Variable>,
        weight: impl Fn(&[usize]) -> f64,
    ) -> Result<Self, InfoError> {
        validate_vars(&vars)?;
        let cards: Vec<usize> = vars.iter().map(|v| v.cardinality).collect();
        let n: usize = cards.iter().product();
        let mut outcome = vec![0; cards.len()];
        let mut weights = Vec::with_capacity(n);
        for flat in 0..n {
            decode(flat, &cards, &mut outcome);
            weights.push(weight(&outcome));
        }
        Self::from_weights(vars, weights)
    }

    /// Appends a variable drawn from `conditional(outcome)` given the current
    /// variables, i.e. `p(x, new) = p(x) q(new | x)`. Each conditional row is
    /// normalized before use.
    pub fn with_conditional(
        &self,
        var: Variable,
        conditional: impl Fn(&[usize]) -> Vec<f64>,
    ) -> Result<Self, InfoError> {
        let mut vars = self.vars.clone();
        let card = var.cardinality;
        vars.push(var);
        validate_vars(&vars)?;
        let cards = self.cardinalities();
        let mut outcome = vec![0; cards.len()];
        let mut probs = Vec::with_capacity(self.probs.len() * card);
        for (flat, &p) in self.probs.iter().enumerate() {
            decode(flat, &cards, &mut outcome);
            let row = conditional(&outcome);
            if row.len() != card {
                return Err(InfoError::TableLength {
                    expected: card,
                    got: row.len(),
                });
            }
            let total: f64 = row.iter().sum();
            if !(total > 0.0) || row.iter().any(|w| !(*w >= 0.0)) {
                return Err(InfoError::InvalidArgument(
                    "conditional row must be non-negative with positive mass".into(),
                ));
            }
            probs.extend(row.iter().map(|w| p * w / total));
        }
        let sum: f64 = probs.iter().sum();
        let probs = probs.into_iter().map(|p| p / sum).collect();
        Self::new(vars, probs)
    }

    /// Appends a deterministic function of the current outcome.
    pub fn with_function(
        &self,
        var: Variable,
        f: impl Fn(&[usize]) -> usize,
    ) -> Result<Self, InfoError> {
        let card = var.cardinality;
        self.with_conditional(var, |o| {
            let mut row = vec![0.0; card];
            row[f(o).min(card - 1)] = 1.0;
            row
        })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.vars.iter().map(|v| v.cardinality).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, InfoError> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| InfoError::UnknownVariable(name.to_string()))
    }

    /// Resolves names to variable indices, rejecting empty or unknown sets.
    pub fn resolve(&self, names: &[&str]) -> Result<Vec<usize>, InfoError> {
        if names.is_empty() {
            return Err(InfoError::EmptySet);
        }
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<_, _>>()?;
        let unique: HashSet<_> = idx.iter().collect();
        if unique.len() != idx.len() {
            return Err(InfoError::OverlappingSets(format!("{names:?}")));
        }
        Ok(idx)
    }

    /// Product of cardinalities of the given variable indices.
    pub fn size_of(&self, idx: &[usize]) -> usize {
        idx.iter().map(|&i| self.vars[i].cardinality).product()
    }

    /// Marginal table over `idx`, laid out row-major in the order given.
    pub fn marginal(&self, idx: &[usize]) -> Vec<f64> {
        let cards = self.cardinalities();
        let mut out = vec![0.0; self.size_of(idx)];
        let mut outcome = vec![0; cards.len()];
        for (flat, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            decode(flat, &cards, &mut outcome);
            let mut j = 0;
            for &i in idx {
                j = j * cards[i] + outcome[i];
            }
            out[j] += p;
        }
        out
    }

    /// Parses the joint-distribution CSV format: a header of
    /// `var:<name>:<cardinality>` columns followed by `p`, then one row per
    /// outcome. Missing outcomes have probability zero.
    pub fn from_csv(text: &str) -> Result<Self, InfoError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(InfoError::Csv {
            line: 1,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.last() != Some(&"p") {
            return Err(InfoError::Csv {
                line: 1,
                message: "last header column must be `p`".into(),
            });
        }
        let mut vars = Vec::new();
        for col in &cols[..cols.len() - 1] {
            let parts: Vec<&str> = col.split(':').collect();
            match parts.as_slice() {
                ["var", name, card] => {
                    let card = card.parse::<usize>().map_err(|_| InfoError::Csv {
                        line: 1,
                        message: format!("bad cardinality in {col:?}"),
                    })?;
                    vars.push(Variable::new(*name, card));
                }
                _ => {
                    return Err(InfoError::Csv {
                        line: 1,
                        message: format!("expected var:<name>:<cardinality>, got {col:?}"),
                    })
                }
            }
        }
        validate_vars(&vars)?;
        let cards: Vec<usize> = vars.iter().map(|v| v.cardinality).collect();
        let mut probs = vec![0.0; cards.iter().product()];
        let mut seen = vec![false; probs.len()];
        for (lineno, line) in lines {
            let line_no = lineno + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(InfoError::Csv {
                    line: line_no,
                    message: format!("expected {} fields, got {}", cols.len(), fields.len()),
                });
            }
            let mut flat = 0;
            for (k, f) in fields[..fields.len() - 1].iter().enumerate() {
                let v = f.parse::<usize>().ok().filter(|&v| v < cards[k]).ok_or_else(|| {
                    InfoError::Csv {
                        line: line_no,
                        message: format!("outcome {f:?} out of range for {}", vars[k].name),
                    }
                })?;
                flat = flat * cards[k] + v;
            }
            let p = fields[fields.len() - 1]
                .parse::<f64>()
                .map_err(|_| InfoError::Csv {
                    line: line_no,
                    message: format!("bad probability {:?}", fields[fields.len() - 1]),
                })?;
            if seen[flat] {
                return Err(InfoError::Csv {
                    line: line_no,
                    message: "duplicate outcome".into(),
                });
            }
            seen[flat] = true;
            probs[flat] = p;
        }
        if let Some(&p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(InfoError::NegativeProbability(p));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(InfoError::NotNormalized { sum });
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Self::new(vars, probs)
    }

    /// Writes every outcome, including zero-probability ones.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for v in &self.vars {
            let _ = write!(out, "var:{}:{},", v.name, v.cardinality);
        }
        out.push_str("p\n");
        let cards = self.cardinalities();
        let mut outcome = vec![0; cards.len()];
        for (flat, p) in self.probs.iter().enumerate() {
            decode(flat, &cards, &mut outcome);
            for o in &outcome {
                let _ = write!(out, "{o},");
            }
            let _ = writeln!(out, "{p:?}");
        }
        out
    }
}

/// Mixed-radix decoding of a flat row-major index.
pub(crate) fn decode(mut flat: usize, cards: &[usize], out: &mut [usize]) {
    for k in (0..cards.len()).rev() {
        out[k] = flat % cards[k];
        flat /= cards[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin_pair() -> JointDistribution {
        JointDistribution::new(
            vec![Variable::new("a", 2), Variable::new("b", 2)],
            vec![0.4, 0.1, 0.2, 0.3],
        )
        .unwrap()
    }

    #[test]
    fn marginals_follow_requested_order() {
        let j = coin_pair();
        assert_eq!(j.marginal(&[0]), vec![0.5, 0.5]);
        let b = j.marginal(&[1]);
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] - 0.4).abs() < 1e-15);
        let ba = j.marginal(&[1, 0]);
        assert_eq!(ba, vec![0.4, 0.2, 0.1, 0.3]);
    }

    #[test]
    fn validation_errors() {
        let v = || vec![Variable::new("a", 2)];
        assert!(matches!(
            JointDistribution::new(v(), vec![0.5, 0.4]),
            Err(InfoError::NotNormalized { .. })
        ));
        assert!(matches!(
            JointDistribution::new(v(), vec![1.5, -0.5]),
            Err(InfoError::NegativeProbability(_))
        ));
        assert!(matches!(
            JointDistribution::new(vec![Variable::new("a", 17)], vec![1.0 / 17.0; 17]),
            Err(InfoError::Cardinality { .. })
        ));
        assert!(matches!(
            JointDistribution::new(
                vec![Variable::new("a", 1), Variable::new("a", 1)],
                vec![1.0]
            ),
            Err(InfoError::DuplicateVariable(_))
        ));
        assert!(matches!(coin_pair().resolve(&["zz"]), Err(InfoError::UnknownVariable(_))));
    }

    #[test]
    fn csv_round_trip_and_renormalization() {
        let j = coin_pair();
        let back = JointDistribution::from_csv(&j.to_csv()).unwrap();
        assert_eq!(back, j);

        let slightly_off = "var:a:2,p\n0,0.5\n1,0.5000000001\n";
        let r = JointDistribution::from_csv(slightly_off).unwrap();
        assert!((r.probabilities().iter().sum::<f64>() - 1.0).abs() <= 1e-15);

        let corrupted = "var:a:2,p\n0,0.5\n1,0.4\n";
        assert!(matches!(
            JointDistribution::from_csv(corrupted),
            Err(InfoError::NotNormalized { .. })
        ));
    }

    #[test]
    fn csv_structural_errors() {
        assert!(matches!(
            JointDistribution::from_csv("var:a:2,q\n"),
            Err(InfoError::Csv { line: 1, .. })
        ));
        assert!(matches!(
            JointDistribution::from_csv("var:a:2,p\n2,1.0\n"),
            Err(InfoError::Csv { line: 2, .. })
        ));
        assert!(matches!(
            JointDistribution::from_csv("var:a:2,p\n0,0.5\n0,0.5\n"),
            Err(InfoError::Csv { line: 3, .. })
        ));
    }

    #[test]
    fn conditional_extension_keeps_marginal() {
        let j = coin_pair();
        let e = j
            .with_conditional(Variable::new("c", 3), |o| vec![1.0 + o[0] as f64, 1.0, 2.0])
            .unwrap();
        let m = e.marginal(&[0, 1]);
        for (x, y) in m.iter().zip(j.probabilities()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
