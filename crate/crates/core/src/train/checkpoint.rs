use std::path::Path;

use crate::data::DataError;
use crate::tensor::{DType, Element, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SINF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A tensor of either storage type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            AnyTensor::F32(t) => t.to_le_bytes(),
            AnyTensor::F64(t) => t.to_le_bytes(),
        }
    }

    /// Wraps a tensor of the generic element type.
    pub fn wrap<T: Element>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }

    /// Unwraps into `T`, failing if the stored dtype differs.
    pub fn unwrap_as<T: Element>(&self) -> Option<Tensor<T>> {
        match (self, T::DTYPE) {
            (AnyTensor::F32(t), DType::F32) => Some(t.cast()),
            (AnyTensor::F64(t), DType::F64) => Some(t.cast()),
            _ => None,
        }
    }
}

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, AnyTensor)>,
    pub epoch: u64,
    pub rng_state: [u8; 32],
    pub config_echo: String,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn write_checkpoint(c: &Checkpoint) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = u32::try_from(c.tensors.len())
        .map_err(|_| DataError::InvalidSpec("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &c.tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| DataError::InvalidSpec(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| DataError::InvalidSpec(format!("tensor {name} has too many dims")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().code());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&t.payload());
    }
    out.extend_from_slice(&c.epoch.to_le_bytes());
    out.extend_from_slice(&c.rng_state);
    let echo = c.config_echo.as_bytes();
    let echo_len = u32::try_from(echo.len())
        .map_err(|_| DataError::InvalidSpec("config echo too long".into()))?;
    out.extend_from_slice(&echo_len.to_le_bytes());
    out.extend_from_slice(echo);
    Ok(out)
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

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DataError> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.array::<4>("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(DataError::MagicMismatch {
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = u32::from_le_bytes(r.array("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = u32::from_le_bytes(r.array("tensor count")?);
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array("tensor name length")?) as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| DataError::InvalidSpec("tensor name is not UTF-8".into()))?
            .to_string();
        let [code] = r.array::<1>("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| DataError::InvalidSpec(format!("unknown dtype code {code}")))?;
        let [rank] = r.array::<1>("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = u64::from_le_bytes(r.array("dims")?);
            shape.push(usize::try_from(d).map_err(|_| DataError::TruncatedPayload { what: "tensor payload" })?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(DataError::TruncatedPayload { what: "tensor payload" })?;
        let width = match dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let raw = r.take(
            numel
                .checked_mul(width)
                .ok_or(DataError::TruncatedPayload { what: "tensor payload" })?,
            "tensor payload",
        )?;
        let t = match dtype {
            DType::F32 => AnyTensor::F32(Tensor::new(shape, raw.chunks_exact(4).map(f32::read_le).collect())?),
            DType::F64 => AnyTensor::F64(Tensor::new(shape, raw.chunks_exact(8).map(f64::read_le).collect())?),
        };
        tensors.push((name, t));
    }
    let epoch = u64::from_le_bytes(r.array("epoch")?);
    let rng_state = r.array::<32>("rng state")?;
    let echo_len = u32::from_le_bytes(r.array("config echo length")?) as usize;
    let config_echo = std::str::from_utf8(r.take(echo_len, "config echo")?)
        .map_err(|_| DataError::InvalidSpec("config echo is not UTF-8".into()))?
        .to_string();
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(Checkpoint {
        tensors,
        epoch,
        rng_state,
        config_echo,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), DataError> {
    let bytes = write_checkpoint(c)?;
    std::fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
