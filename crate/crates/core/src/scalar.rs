//! Scalar abstraction: every numeric kernel in this crate is generic over the
//! element type, with `f32` used on inference paths and `f64` reserved for
//! gradient verification.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type of a [`crate::tensor::Tensor`].
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Constant conversion; panics only on NaN literals, which never appear
    /// in this crate.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
