//! Scalar abstraction for the numeric core: everything float-valued is
//! generic over [`Scalar`], instantiated at `f32` or `f64`.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar for tensors, embeddings, and metric arithmetic.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Cast from `f64`, panicking only on values no float type can hold.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> scalar cast")
    }

    /// Cast to `f64` for reporting and serialization.
    fn to_f64_c(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar -> f64 cast")
    }

    /// Cast from `usize` (counts, lengths).
    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize -> scalar cast")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
