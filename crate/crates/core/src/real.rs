use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type tag, matching the dtype byte of the tensor container format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element of a [`Tensor`](crate::Tensor). Implemented for `f32`
/// (training) and `f64` (gradient verification).
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    // Transcendentals go through libm so results do not depend on whether
    // another crate in the build enables the std backend of num-traits.
    fn libm_exp(self) -> Self;
    fn libm_ln(self) -> Self;
    fn libm_ln_1p(self) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    fn libm_exp(self) -> Self {
        libm::expf(self)
    }

    fn libm_ln(self) -> Self {
        libm::logf(self)
    }

    fn libm_ln_1p(self) -> Self {
        libm::log1pf(self)
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }

    fn libm_exp(self) -> Self {
        libm::exp(self)
    }

    fn libm_ln(self) -> Self {
        libm::log(self)
    }

    fn libm_ln_1p(self) -> Self {
        libm::log1p(self)
    }
}
