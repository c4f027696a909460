use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of every tensor, patch and score.
///
/// Implemented for `f32` and `f64`. The network math, gradient checks and
/// checkpoints are specified in 64-bit; `f32` is available for callers that
/// trade precision for memory.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Size in bytes, used in diagnostics.
    const BYTES: usize;

    /// Lossy conversion from a literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits the scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;
}

impl Scalar for f64 {
    const BYTES: usize = 8;
}
