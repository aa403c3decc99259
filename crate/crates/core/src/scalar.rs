//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the network can be instantiated with (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real converts to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic sigmoid evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// SiLU base function `x * sigmoid(x)`.
#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Derivative of SiLU: `s + x s (1 - s)`.
#[inline]
pub fn silu_deriv<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}
