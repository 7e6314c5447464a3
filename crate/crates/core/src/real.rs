//! Generic scalar abstraction over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits as nt;

/// Floating-point scalar the whole crate is generic over.
///
/// `nalgebra::RealField` supplies the transcendental methods; `num_traits::Float`
/// is deliberately not a supertrait because its methods collide with
/// `RealField`'s during resolution.
pub trait Real:
    Copy
    + Default
    + Display
    + Debug
    + Sum
    + nt::FromPrimitive
    + nt::ToPrimitive
    + nt::FloatConst
    + nalgebra::RealField
{
    const ZERO: Self;
    const ONE: Self;
    const TWO: Self;
    const HALF: Self;

    /// Power-of-two coordinate grid density, chosen so that any two grid
    /// multiples of magnitude ≤ 2 have an exactly representable sum and
    /// difference (the mantissa holds three bits of headroom).
    const GRID_SCALE: Self;

    /// Lossy conversion from an `f64` literal; exact for values representable
    /// in the target type.
    fn c(v: f64) -> Self;

    /// Exact widening to `f64` (for reports and serialization headers).
    fn to64(self) -> f64;

    /// Named to avoid clashing with `num_traits::FromPrimitive::from_usize`.
    fn from_count(n: usize) -> Self;
}

/// Scalar minimum without relying on any particular float trait's method.
#[inline]
pub fn rmin<S: Real>(a: S, b: S) -> S {
    if b < a {
        b
    } else {
        a
    }
}

/// Scalar maximum; see [`rmin`].
#[inline]
pub fn rmax<S: Real>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

macro_rules! impl_real {
    ($t:ty, $grid:expr) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const TWO: Self = 2.0;
            const HALF: Self = 0.5;
            const GRID_SCALE: Self = $grid;

            #[inline]
            fn c(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn from_count(n: usize) -> Self {
                n as $t
            }
        }
    };
}

impl_real!(f32, 2097152.0); // 2^21
impl_real!(f64, 1125899906842624.0); // 2^50
