//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the lifting and solver code is generic over (`f32` or `f64`).
///
/// Linear algebra comes from nalgebra's `RealField`; conversions to and from
/// literals go through num-traits.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot hold.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal out of range for scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(value: usize) -> Self {
        Self::from_usize(value).expect("integer out of range for scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
