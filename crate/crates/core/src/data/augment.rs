use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Element of the symmetry group of the square: optional left-right flip
/// followed by `quarter_turns` counter-clockwise rotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        quarter_turns: 0,
    };

    pub fn new(flip: bool, quarter_turns: u8) -> Self {
        Dihedral {
            flip,
            quarter_turns: quarter_turns % 4,
        }
    }

    /// All 8 elements, identity first.
    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Dihedral::new(i >= 4, (i % 4) as u8);
        }
        out
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn then_after(self, other: Dihedral) -> Dihedral {
        // R^a F^f ∘ R^b F^g = R^(a ± b) F^(f xor g), since F R = R⁻¹ F
        let b = if self.flip {
            (4 - other.quarter_turns) % 4
        } else {
            other.quarter_turns
        };
        Dihedral::new(self.flip ^ other.flip, self.quarter_turns + b)
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip {
            self
        } else {
            Dihedral::new(false, 4 - self.quarter_turns)
        }
    }

    /// Applies the transform to every channel of a `[C, n, n]` tensor.
    pub fn apply<T: Scalar>(self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = match patch.dims() {
            [h, w] => (1, *h, *w),
            [c, h, w] => (*c, *h, *w),
            d => return Err(Error::dim("augment", "rank", "2 or 3", d.len())),
        };
        if h != w {
            return Err(Error::dim("augment", "width", h, w));
        }
        let n = h;
        let src = patch.data();
        let mut out = vec![T::zero(); src.len()];
        for ch in 0..c {
            let base = ch * n * n;
            for y in 0..n {
                for x in 0..n {
                    // inverse map: output (y, x) reads source (sy, sx)
                    let (mut sy, mut sx) = (y, x);
                    for _ in 0..self.quarter_turns {
                        // undo one CCW turn: out[i][j] = in[j][n-1-i]
                        (sy, sx) = (sx, n - 1 - sy);
                    }
                    if self.flip {
                        sx = n - 1 - sx;
                    }
                    out[base + y * n + x] = src[base + sy * n + sx];
                }
            }
        }
        Tensor::new(patch.dims().to_vec(), out)
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.quarter_turns as u32 * 90)?;
        if self.flip {
            write!(f, "f")?;
        }
        Ok(())
    }
}

/// The 8 tagged variants of a square patch, identity first.
pub fn augment<T: Scalar>(patch: &Tensor<T>) -> Result<Vec<(Dihedral, Tensor<T>)>> {
    Dihedral::all().into_iter().map(|d| Ok((d, d.apply(patch)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![1, n, n], data.to_vec()).unwrap()
    }

    #[test]
    fn quarter_turn_ccw() {
        let r = Dihedral::new(false, 1).apply(&t(2, &[1., 2., 3., 4.])).unwrap();
        assert_eq!(r.data(), &[2., 4., 1., 3.]);
        let f = Dihedral::new(true, 0).apply(&t(2, &[1., 2., 3., 4.])).unwrap();
        assert_eq!(f.data(), &[2., 1., 4., 3.]);
    }

    #[test]
    fn half_turn_twice_is_identity() {
        let x = Tensor::from_fn(&[1, 5, 5], |i| i as f64);
        let r = Dihedral::new(false, 2);
        assert_eq!(r.apply(&r.apply(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn constant_patch_gives_identical_variants() {
        let v = augment(&Tensor::filled(&[1, 4, 4], 2.5)).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.iter().all(|(_, p)| p.data().iter().all(|&x| x == 2.5)));
        let tags: std::collections::BTreeSet<_> = v.iter().map(|(d, _)| *d).collect();
        assert_eq!(tags.len(), 8);
    }

    #[test]
    fn group_closure_and_composition() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| (i * i) as f64);
        let all = Dihedral::all();
        for &a in &all {
            assert_eq!(a.then_after(a.inverse()), Dihedral::IDENTITY);
            for &b in &all {
                let ab = a.then_after(b);
                assert!(all.contains(&ab));
                let seq = a.apply(&b.apply(&x).unwrap()).unwrap();
                assert_eq!(seq, ab.apply(&x).unwrap(), "{a} after {b}");
            }
        }
    }

    #[test]
    fn non_square_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 3]);
        assert!(Dihedral::new(false, 1).apply(&x).is_err());
    }
}
