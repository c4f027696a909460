//! Binary checkpoint format. All integers and payloads little-endian:
//!
//! ```text
//! "DVMM"              4 bytes magic
//! version             u32
//! fingerprint         u64   architecture hash
//! seed                u64   seed of the training run
//! tensor_count        u32
//! per tensor:
//!   name_len          u32
//!   name              UTF-8 bytes
//!   rank              u32
//!   dims              rank × u64
//!   payload           product(dims) × f64, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{ArchConfig, MatchModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DVMM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents, independent of any model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: u64,
    pub seed: u64,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &MatchModel<T>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            fingerprint: model.fingerprint(),
            seed: model.seed,
            tensors: model
                .params()
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        p.value.dims().to_vec(),
                        p.value.data().iter().map(|v| v.as_f64()).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, dims, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let fingerprint = r.u64("fingerprint")?;
        let seed = r.u64("seed")?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| Error::Format {
                offset: at as u64,
                reason: "tensor name is not UTF-8".into(),
            })?;
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64("dim")? as usize);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Format {
                offset: r.pos as u64,
                reason: format!("dims {dims:?} overflow"),
            })?;
            let payload = r.take(n.saturating_mul(8), "payload")?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, dims, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            version,
            fingerprint,
            seed,
            tensors,
        })
    }

    /// Rebuilds a model for `arch` from these tensors.
    pub fn into_model<T: Scalar>(self, arch: &ArchConfig) -> Result<MatchModel<T>> {
        let expected = arch.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::IncompatibleCheckpoint {
                expected,
                found: self.fingerprint,
            });
        }
        let mut model = MatchModel::<T>::build(arch, self.seed)?;
        if self.tensors.len() != model.params().len() {
            return Err(Error::Format {
                offset: 24,
                reason: format!("{} tensors, architecture needs {}", self.tensors.len(), model.params().len()),
            });
        }
        for ((name, dims, data), p) in self.tensors.into_iter().zip(model.params_mut()) {
            if name != p.name || dims != p.value.dims() {
                return Err(Error::Format {
                    offset: 24,
                    reason: format!(
                        "tensor {name} {dims:?} does not match parameter {} {:?}",
                        p.name,
                        p.value.dims()
                    ),
                });
            }
            p.value = Tensor::new(dims, data.into_iter().map(T::c).collect())?;
        }
        model.seed = self.seed;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint<T: Scalar>(model: &MatchModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, Checkpoint::from_model(model).to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, arch: &ArchConfig) -> Result<MatchModel<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)?.into_model(arch)
}
