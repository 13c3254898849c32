//! Frozen-feature evaluation: encoder features and a multinomial logistic
//! regression probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetContainer;
use crate::model::{encode, ModelBundle};
use crate::tensor::{Element, Tape, Tensor, TensorError};

/// Rows per forward pass during feature extraction.
const EXTRACT_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("training labels contain a single class ({0}); the probe needs at least two")]
    SingleClass(u32),
    #[error("{0}")]
    Dimension(String),
    #[error("dataset has no labels")]
    MissingLabels,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Gradient-norm threshold for the `converged` flag.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iterations: 500,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts over the test set.
    pub confusion: Vec<Vec<u64>>,
    pub n_train: usize,
    pub n_test: usize,
    pub probe_seed: u64,
    pub converged: bool,
}

/// Encoder outputs `h` for every row, without augmentation or gradients.
pub fn extract_features<T: Element>(bundle: &ModelBundle<T>, x: &Tensor<f32>) -> Result<Tensor<f64>, EvalError> {
    let (n, d) = (x.rows(), x.cols());
    if x.rank() != 2 || d != bundle.dims.input_dim {
        return Err(EvalError::Dimension(format!(
            "data has {d} features but the encoder expects {}",
            bundle.dims.input_dim
        )));
    }
    let h = bundle.dims.repr_dim;
    let mut out = Vec::with_capacity(n * h);
    let mut start = 0;
    while start < n {
        let end = (start + EXTRACT_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let mut tape = Tape::<T>::new();
        let bound = bundle.bind(&mut tape, false);
        let xv = tape.constant(x.select_rows(&rows)?.cast());
        let hv = encode(&mut tape, &bound, xv)?;
        out.extend(tape.value(hv).data().iter().map(|v| v.as_f64()));
        start = end;
    }
    Ok(Tensor::new(vec![n, h], out)?)
}

fn standardizer(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n.max(1) as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn standardize(x: &Tensor<f64>, mean: &[f64], std: &[f64]) -> Vec<f64> {
    let d = x.cols();
    x.data()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % d]) / std[k % d])
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Logits `x W + b` for `n` rows of width `d` and `k` classes.
fn logits(x: &[f64], w: &[f64], b: &[f64], n: usize, d: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for c in 0..k {
            let mut z = b[c];
            for j in 0..d {
                z += xi[j] * w[j * k + c];
            }
            out.push(z);
        }
    }
    out
}

/// Fits a softmax classifier on standardized train features by full-batch
/// gradient descent from zero weights and reports test accuracy.
pub fn linear_probe(
    train_x: &Tensor<f64>,
    train_y: &[u32],
    test_x: &Tensor<f64>,
    test_y: &[u32],
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let (n, d) = (train_x.rows(), train_x.cols());
    if train_x.rank() != 2 || test_x.rank() != 2 || test_x.cols() != d {
        return Err(EvalError::Dimension(format!(
            "train features {:?} and test features {:?} disagree",
            train_x.shape(),
            test_x.shape()
        )));
    }
    if train_y.len() != n || test_y.len() != test_x.rows() {
        return Err(EvalError::Dimension(format!(
            "{} train labels for {n} rows, {} test labels for {} rows",
            train_y.len(),
            test_y.len(),
            test_x.rows()
        )));
    }
    let first = *train_y.first().ok_or_else(|| EvalError::Dimension("empty training set".into()))?;
    if train_y.iter().all(|&y| y == first) {
        return Err(EvalError::SingleClass(first));
    }
    if test_y.is_empty() {
        return Err(EvalError::Dimension("empty test set".into()));
    }
    let k = train_y.iter().chain(test_y).copied().max().unwrap_or(0) as usize + 1;

    let (mean, std) = standardizer(train_x);
    let xs = standardize(train_x, &mean, &std);
    let mut w = vec![0.0; d * k];
    let mut b = vec![0.0; k];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.iterations {
        let mut z = logits(&xs, &w, &b, n, d, k);
        // z becomes (softmax - onehot) / n
        for (i, row) in z.chunks_exact_mut(k).enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s * n as f64;
            }
            row[train_y[i] as usize] -= 1.0 / n as f64;
        }
        let mut gw = vec![0.0; d * k];
        let mut gb = vec![0.0; k];
        for i in 0..n {
            let xi = &xs[i * d..(i + 1) * d];
            let ri = &z[i * k..(i + 1) * k];
            for j in 0..d {
                let xv = xi[j];
                for c in 0..k {
                    gw[j * k + c] += xv * ri[c];
                }
            }
            gb.iter_mut().zip(ri).for_each(|(g, r)| *g += r);
        }
        grad_norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        w.iter_mut().zip(&gw).for_each(|(p, g)| *p -= cfg.lr * g);
        b.iter_mut().zip(&gb).for_each(|(p, g)| *p -= cfg.lr * g);
    }

    let xt = standardize(test_x, &mean, &std);
    let zt = logits(&xt, &w, &b, test_x.rows(), d, k);
    let mut confusion = vec![vec![0u64; k]; k];
    for (row, &y) in zt.chunks_exact(k).zip(test_y) {
        confusion[y as usize][argmax(row)] += 1;
    }
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    Ok(ProbeResult {
        accuracy: correct as f64 / test_y.len() as f64,
        per_class_accuracy,
        confusion,
        n_train: n,
        n_test: test_y.len(),
        probe_seed: cfg.seed,
        converged: grad_norm <= cfg.tol,
    })
}

/// Extracts features from a labelled train/test pair and probes them.
pub fn probe_datasets<T: Element>(
    bundle: &ModelBundle<T>,
    train: &DatasetContainer,
    test: &DatasetContainer,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let train_y = train.labels.as_ref().ok_or(EvalError::MissingLabels)?;
    let test_y = test.labels.as_ref().ok_or(EvalError::MissingLabels)?;
    let ftrain = extract_features(bundle, &train.samples)?;
    let ftest = extract_features(bundle, &test.samples)?;
    linear_probe(&ftrain, train_y, &ftest, test_y, cfg)
}

/// Probes every `(train, test)` pair; results keep the input order.
pub fn transfer_eval<T: Element>(
    bundle: &ModelBundle<T>,
    datasets: &[(DatasetContainer, DatasetContainer)],
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeResult>, EvalError> {
    datasets
        .par_iter()
        .map(|(train, test)| probe_datasets(bundle, train, test, cfg))
        .collect()
}

/// Mean accuracy over probe results (0 for an empty list).
pub fn mean_accuracy(results: &[ProbeResult]) -> f64 {
    if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64
    }
}
