use crate::tensor::{Rng, Tensor};

use super::{augment, AugmentationConfig, DataError, DatasetContainer, PairedDataset, SampleShape};

/// Where the two views of a sample come from.
#[derive(Clone, Debug)]
pub enum ViewSource {
    /// Two stored views; view `k` is augmented from `v1[k]` and `v2[k]`.
    Paired {
        v1: Tensor<f32>,
        v2: Tensor<f32>,
        shape: SampleShape,
    },
    /// One stored view augmented twice.
    Single { x: Tensor<f32>, shape: SampleShape },
}

impl ViewSource {
    pub fn paired(data: &PairedDataset) -> Self {
        ViewSource::Paired {
            v1: data.v1.clone(),
            v2: data.v2.clone(),
            shape: data.shape(),
        }
    }

    pub fn from_containers(a: DatasetContainer, b: Option<DatasetContainer>) -> Result<Self, DataError> {
        match b {
            None => Ok(ViewSource::Single {
                x: a.samples,
                shape: a.shape,
            }),
            Some(b) => {
                if a.shape != b.shape || a.len() != b.len() {
                    return Err(DataError::ViewMismatch(format!(
                        "view 1 has {} samples of {:?}, view 2 has {} samples of {:?}",
                        a.len(),
                        a.shape,
                        b.len(),
                        b.shape
                    )));
                }
                Ok(ViewSource::Paired {
                    v1: a.samples,
                    v2: b.samples,
                    shape: a.shape,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ViewSource::Paired { v1, .. } => v1.rows(),
            ViewSource::Single { x, .. } => x.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> SampleShape {
        match self {
            ViewSource::Paired { shape, .. } | ViewSource::Single { shape, .. } => *shape,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape().numel()
    }

    fn rows(&self, k: usize) -> (&[f32], &[f32]) {
        match self {
            ViewSource::Paired { v1, v2, .. } => (v1.row(k), v2.row(k)),
            ViewSource::Single { x, .. } => (x.row(k), x.row(k)),
        }
    }
}

/// Both augmented views of one minibatch, row `k` of each belonging to
/// sample `indices[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub indices: Vec<usize>,
    pub x1: Tensor<f32>,
    pub x2: Tensor<f32>,
}

/// Shuffles `0..n` and cuts it into full batches; the remainder is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size < 2 {
        return Err(DataError::InvalidSpec(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    if n < batch_size {
        return Err(DataError::DatasetTooSmall { n, batch_size });
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// One epoch of augmented paired-view batches.
pub struct BatchIter<'a> {
    source: &'a ViewSource,
    aug: AugmentationConfig,
    rng: &'a mut Rng,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    /// Draws the epoch permutation immediately; augmentation noise is drawn
    /// lazily, batch by batch, from the same stream.
    pub fn new(
        source: &'a ViewSource,
        batch_size: usize,
        aug: AugmentationConfig,
        rng: &'a mut Rng,
    ) -> Result<Self, DataError> {
        aug.validate()?;
        let batches = epoch_batches(source.len(), batch_size, rng)?;
        Ok(Self {
            source,
            aug,
            rng,
            batches: batches.into_iter(),
        })
    }

    pub fn remaining(&self) -> usize {
        self.batches.len()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = ViewBatch;

    fn next(&mut self) -> Option<ViewBatch> {
        let indices = self.batches.next()?;
        let (shape, d) = (self.source.shape(), self.source.dim());
        let mut x1 = Vec::with_capacity(indices.len() * d);
        let mut x2 = Vec::with_capacity(indices.len() * d);
        for &k in &indices {
            let (a, b) = self.source.rows(k);
            x1.extend(augment(a, shape, &self.aug, self.rng));
            x2.extend(augment(b, shape, &self.aug, self.rng));
        }
        let n = indices.len();
        Some(ViewBatch {
            indices,
            x1: Tensor::new(vec![n, d], x1).expect("batch rows have the sample width"),
            x2: Tensor::new(vec![n, d], x2).expect("batch rows have the sample width"),
        })
    }
}
