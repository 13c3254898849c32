use std::path::Path;

use crate::tensor::Tensor;

use super::{DataError, PairedDataset};

pub const CONTAINER_MAGIC: [u8; 4] = *b"SIDS";
pub const CONTAINER_VERSION: u32 = 1;

/// Layout of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleShape {
    Vector(u32),
    Image { c: u32, h: u32, w: u32 },
}

impl SampleShape {
    pub fn numel(&self) -> usize {
        match *self {
            SampleShape::Vector(d) => d as usize,
            SampleShape::Image { c, h, w } => c as usize * h as usize * w as usize,
        }
    }
}

/// One view of a dataset as stored on disk: `n x D` f32 samples and optional
/// labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetContainer {
    pub shape: SampleShape,
    pub samples: Tensor<f32>,
    pub labels: Option<Vec<u32>>,
}

impl DatasetContainer {
    pub fn new(
        shape: SampleShape,
        samples: Tensor<f32>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self, DataError> {
        let c = Self {
            shape,
            samples,
            labels,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.shape.numel()
    }

    /// Number of classes implied by the labels (largest label + 1).
    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m as usize + 1)
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.samples.rank() != 2 || self.samples.cols() != self.dim() {
            return Err(DataError::ViewMismatch(format!(
                "samples of shape {:?} do not match sample layout {:?}",
                self.samples.shape(),
                self.shape
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(DataError::ViewMismatch(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }

    /// Splits a paired dataset into its two labelled views.
    pub fn from_paired(data: &PairedDataset) -> Result<[Self; 2], DataError> {
        Ok([
            Self::new(data.shape(), data.v1.clone(), Some(data.labels.clone()))?,
            Self::new(data.shape(), data.v2.clone(), Some(data.labels.clone()))?,
        ])
    }
}

/// Serializes a container to its binary image.
pub fn write_container(c: &DatasetContainer) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + c.samples.len() * 4);
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.len() as u64).to_le_bytes());
    match c.shape {
        SampleShape::Vector(d) => {
            out.push(0);
            out.extend_from_slice(&d.to_le_bytes());
        }
        SampleShape::Image { c, h, w } => {
            out.push(1);
            for v in [c, h, w] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.push(u8::from(c.labels.is_some()));
    out.extend_from_slice(&c.samples.to_le_bytes());
    if let Some(labels) = &c.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(DataError::TruncatedPayload { what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a binary container image.
pub fn read_container(bytes: &[u8]) -> Result<DatasetContainer, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != CONTAINER_MAGIC {
        return Err(DataError::MagicMismatch {
            found: magic,
            expected: CONTAINER_MAGIC,
        });
    }
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let n = r.u64("sample count")?;
    let shape = match r.u8("shape kind")? {
        0 => SampleShape::Vector(r.u32("dimension")?),
        1 => SampleShape::Image {
            c: r.u32("channels")?,
            h: r.u32("height")?,
            w: r.u32("width")?,
        },
        k => return Err(DataError::UnknownShapeKind(k)),
    };
    let has_labels = r.u8("label flag")? != 0;
    let n = usize::try_from(n).map_err(|_| DataError::TruncatedPayload { what: "samples" })?;
    let floats = n
        .checked_mul(shape.numel())
        .ok_or(DataError::TruncatedPayload { what: "samples" })?;
    let payload = r.take(
        floats.checked_mul(4).ok_or(DataError::TruncatedPayload { what: "samples" })?,
        "samples",
    )?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let labels = if has_labels {
        let raw = r.take(n * 4, "labels")?;
        Some(
            raw.chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        )
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    DatasetContainer::new(shape, Tensor::new(vec![n, shape.numel()], data)?, labels)
}

pub fn save_container(c: &DatasetContainer, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, write_container(c)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_container(path: &Path) -> Result<DatasetContainer, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_container(&bytes)
}
