//! Floating point abstraction shared by every model routine.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// f32 or f64.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used when cross-checking two independent computations.
    ///
    /// Never tighter than `floor`, and never tighter than what the type's
    /// precision can deliver.
    #[inline]
    fn agreement_tol(floor: f64) -> Self {
        Self::lit(floor).max(Self::epsilon().sqrt())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `max(x, 0)`.
#[inline]
pub fn positive_part<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// Relative closeness test, `|a - b| <= tol * max(1, |a|, |b|)`.
#[inline]
pub fn close<T: Scalar>(a: T, b: T, tol: T) -> bool {
    (a - b).abs() <= tol * T::one().max(a.abs()).max(b.abs())
}
