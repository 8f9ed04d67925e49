use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Element type for tensors and tapes.
///
/// Everything numeric is generic over this so the same graph code runs in
/// `f32` for training/synthesis and in `f64` for finite-difference gradient
/// checks, where `f32` rounding would drown out the comparison.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn cast_from(v: f64) -> Self;
    fn cast_f64(self) -> f64;

    fn cast_usize(v: usize) -> Self {
        Self::cast_from(v as f64)
    }

    /// ln(1 + e^x) computed without overflow for large |x|.
    fn softplus(self) -> Self {
        let zero = Self::zero();
        let m = if self > zero { self } else { zero };
        m + (-self.abs()).exp().ln_1p()
    }

    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

impl Scalar for f32 {
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    fn cast_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn cast_from(v: f64) -> Self {
        v
    }
    fn cast_f64(self) -> f64 {
        self
    }
}
