use crate::info::{InfoError, JointDistribution, Variable};
use crate::tensor::{Rng, Tensor};

use super::{DataError, SampleShape};

/// Generative recipe for paired views.
///
/// Each sample draws a class `y`. Both views contain the shared code `c(y)`
/// plus a jitter vector common to the pair; view `i` also holds its own
/// class-correlated code `s_i(y)` and independent nuisance scaled by
/// `nuisance_scale`. The latent blocks are mixed by a fixed orthogonal map per
/// view and observation noise is added.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub d_shared: usize,
    pub d_specific: usize,
    pub d_nuisance: usize,
    pub n_samples: usize,
    pub mixing_seed: u64,
    pub noise_std: f64,
    pub nuisance_scale: f64,
    /// Within-class spread of the shared block.
    pub jitter_std: f64,
    /// Per-view spread of the specific block.
    pub specific_jitter_std: f64,
    /// Use one mixing map for both views.
    pub shared_mixing: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            d_shared: 4,
            d_specific: 4,
            d_nuisance: 24,
            n_samples: 1024,
            mixing_seed: 7,
            noise_std: 0.05,
            nuisance_scale: 1.0,
            jitter_std: 0.3,
            specific_jitter_std: 0.3,
            shared_mixing: false,
        }
    }
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.d_shared + self.d_specific + self.d_nuisance
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.dim() == 0 {
            return bad("view dimension d_shared + d_specific + d_nuisance must be >= 1".into());
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("nuisance_scale", self.nuisance_scale),
            ("jitter_std", self.jitter_std),
            ("specific_jitter_std", self.specific_jitter_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Two aligned views of the same underlying samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub v1: Tensor<f32>,
    pub v2: Tensor<f32>,
    pub labels: Vec<u32>,
    pub n_classes: usize,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.v1.cols()
    }

    pub fn shape(&self) -> SampleShape {
        SampleShape::Vector(self.dim() as u32)
    }
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    if d == 0 {
        return Vec::new();
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random `d x d` orthogonal matrix (rows orthonormal), row-major.
fn orthogonal(rng: &mut Rng, d: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

/// Fixed parameters derived from `mixing_seed`.
struct Codes {
    shared: Vec<Vec<f64>>,
    specific: [Vec<Vec<f64>>; 2],
    mixing: [Vec<f64>; 2],
}

impl Codes {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = Rng::substream(spec.mixing_seed, "codes");
        let shared = (0..spec.n_classes)
            .map(|_| unit_vector(&mut rng, spec.d_shared))
            .collect();
        let mut specific = || {
            (0..spec.n_classes)
                .map(|_| unit_vector(&mut rng, spec.d_specific))
                .collect::<Vec<_>>()
        };
        let specific = [specific(), specific()];
        let mut mix_rng = Rng::substream(spec.mixing_seed, "mixing");
        let m1 = orthogonal(&mut mix_rng, spec.dim());
        let m2 = if spec.shared_mixing {
            m1.clone()
        } else {
            orthogonal(&mut mix_rng, spec.dim())
        };
        Self {
            shared,
            specific,
            mixing: [m1, m2],
        }
    }
}

/// Draws `spec.n_samples` paired samples. Class codes and mixing maps depend
/// only on `spec.mixing_seed`; everything per-sample comes from `rng`.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<PairedDataset, DataError> {
    spec.validate()?;
    let codes = Codes::new(spec);
    let d = spec.dim();
    let n = spec.n_samples;
    let mut views = [Vec::with_capacity(n * d), Vec::with_capacity(n * d)];
    let mut labels = Vec::with_capacity(n);
    let mut latent = vec![0.0; d];
    for _ in 0..n {
        let y = rng.below(spec.n_classes);
        labels.push(y as u32);
        let jitter: Vec<f64> = (0..spec.d_shared)
            .map(|_| rng.normal() * spec.jitter_std)
            .collect();
        for (view, out) in views.iter_mut().enumerate() {
            let mut k = 0;
            for (c, j) in codes.shared[y].iter().zip(&jitter) {
                latent[k] = c + j;
                k += 1;
            }
            for s in &codes.specific[view][y] {
                latent[k] = s + rng.normal() * spec.specific_jitter_std;
                k += 1;
            }
            for _ in 0..spec.d_nuisance {
                latent[k] = rng.normal() * spec.nuisance_scale;
                k += 1;
            }
            let m = &codes.mixing[view];
            for col in 0..d {
                let mut acc = 0.0;
                for (row, l) in latent.iter().enumerate() {
                    acc += l * m[row * d + col];
                }
                if spec.noise_std > 0.0 {
                    acc += rng.normal() * spec.noise_std;
                }
                out.push(acc as f32);
            }
        }
    }
    let [v1, v2] = views;
    Ok(PairedDataset {
        v1: Tensor::new(vec![n, d], v1)?,
        v2: Tensor::new(vec![n, d], v2)?,
        labels,
        n_classes: spec.n_classes,
    })
}

/// Discretized joint of the generative latents for a one-dimensional instance:
/// class `y`, the shared block as seen by each view (`shared1`, `shared2`), and
/// each view's nuisance (`nuisance1`, `nuisance2`).
///
/// The shared block is the class code plus jitter on a `bins`-point grid; the
/// nuisance is a Gaussian of standard deviation `nuisance_scale` discretized on
/// a fixed `bins`-point grid over `[-3, 3]`.
pub fn latent_joint(spec: &SyntheticSpec, bins: usize) -> Result<JointDistribution, InfoError> {
    if bins < 2 {
        return Err(InfoError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let grid = |i: usize| -3.0 + 6.0 * i as f64 / (bins - 1) as f64;
    let gauss = |x: f64, mean: f64, std: f64| {
        if std == 0.0 {
            if (x - mean).abs() < 1e-12 { 1.0 } else { 0.0 }
        } else {
            (-0.5 * ((x - mean) / std).powi(2)).exp()
        }
    };
    let codes: Vec<f64> = (0..spec.n_classes)
        .map(|y| -2.0 + 4.0 * y as f64 / (spec.n_classes.max(2) - 1) as f64)
        .collect();
    let snap = |x: f64| {
        (0..bins)
            .min_by(|&a, &b| (grid(a) - x).abs().total_cmp(&(grid(b) - x).abs()))
            .unwrap_or(0)
    };
    let jitter = spec.jitter_std.max(1e-3);
    let nuisance = spec.nuisance_scale;
    let nuisance_row = |_: &[usize]| {
        let row: Vec<f64> = (0..bins).map(|i| gauss(grid(i), 0.0, nuisance)).collect();
        if row.iter().sum::<f64>() > 0.0 {
            row
        } else {
            let mut r = vec![0.0; bins];
            r[snap(0.0)] = 1.0;
            r
        }
    };
    JointDistribution::from_fn(vec![Variable::new("y", spec.n_classes)], |_| 1.0)?
        .with_conditional(Variable::new("shared1", bins), |o| {
            (0..bins).map(|i| gauss(grid(i), codes[o[0]], jitter)).collect()
        })?
        .with_function(Variable::new("shared2", bins), |o| o[1])?
        .with_conditional(Variable::new("nuisance1", bins), nuisance_row)?
        .with_conditional(Variable::new("nuisance2", bins), nuisance_row)
}
