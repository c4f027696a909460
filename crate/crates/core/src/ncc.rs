//! Normalized cross correlation between equal-size patches at a single
//! alignment, remapped from `[-1, 1]` to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::data::PatchPair;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const DEGENERATE_STD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NccScore {
    pub raw: f64,
    /// `(raw + 1) / 2`.
    pub mapped: f64,
    /// One of the patches was constant; `raw` is 0 by convention.
    pub degenerate: bool,
}

impl NccScore {
    fn from_raw(raw: f64) -> Self {
        NccScore {
            raw,
            mapped: (raw + 1.0) / 2.0,
            degenerate: false,
        }
    }
}

pub fn ncc<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<NccScore> {
    if a.dims() != b.dims() {
        return Err(Error::dim("ncc", "patch shape", format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    let n = a.len() as f64;
    let ma = a.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.as_f64() - ma, y.as_f64() - mb);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na / n).sqrt() < DEGENERATE_STD || (nb / n).sqrt() < DEGENERATE_STD {
        return Ok(NccScore {
            raw: 0.0,
            mapped: 0.5,
            degenerate: true,
        });
    }
    Ok(NccScore::from_raw((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)))
}

/// `(mapped score, label)` per pair, in input order.
pub fn ncc_score_dataset<T: Scalar>(pairs: &[PatchPair<T>]) -> Result<Vec<(f64, u8)>> {
    pairs
        .iter()
        .map(|p| Ok((ncc(&p.patch_a, &p.patch_b)?.mapped, p.label)))
        .collect()
}
