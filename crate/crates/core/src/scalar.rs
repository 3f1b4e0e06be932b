//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into this scalar.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Propagation speed used throughout, in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// `e^{j·2π·cycles}`, reducing `cycles` to its fractional part first so that
/// large carrier phase counts keep full precision.
#[inline]
pub fn phasor_cycles<T: Real>(cycles: T) -> Complex<T> {
    let frac = cycles - cycles.floor();
    Complex::from_polar(T::one(), T::TAU() * frac)
}

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap_phase<T: Real>(theta: T) -> T {
    let tau = T::TAU();
    let shifted = theta + T::PI();
    let wrapped = shifted - tau * (shifted / tau).floor();
    let out = wrapped - T::PI();
    // floor can land exactly on +π through rounding
    if out >= T::PI() {
        out - tau
    } else {
        out
    }
}

/// Argument of a complex value, defined as 0 for an exact zero.
#[inline]
pub fn arg_or_zero<T: Real>(z: Complex<T>) -> T {
    if z.re == T::zero() && z.im == T::zero() {
        T::zero()
    } else {
        z.im.atan2(z.re)
    }
}

/// Normalized sinc, `sin(πx)/(πx)` with `sinc(0) = 1`.
#[inline]
pub fn sinc<T: Real>(x: T) -> T {
    if x == T::zero() {
        T::one()
    } else {
        let px = T::PI() * x;
        px.sin() / px
    }
}
