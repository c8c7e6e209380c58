//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the analytic routines are generic over: `f32` or `f64`.
///
/// All tolerances quoted in the documentation refer to `f64`; `f32` is
/// supported for cheap exploratory grids where six digits are enough.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_int(n: i64) -> Self {
        Self::from_i64(n).expect("integer representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum exp(x_i))` over an iterator; `-inf` for an empty input.
pub fn log_sum_exp<T: Real, I: IntoIterator<Item = T>>(xs: I) -> T {
    let xs: Vec<T> = xs.into_iter().collect();
    let hi = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if hi == T::neg_infinity() {
        return hi;
    }
    if hi == T::infinity() {
        return hi;
    }
    let s = xs.iter().fold(T::zero(), |acc, &x| acc + (x - hi).exp());
    hi + s.ln()
}

/// `log(1 - exp(x))` for `x <= 0`, accurate on both ends of the range.
pub fn log1m_exp<T: Real>(x: T) -> T {
    if x > -T::LN_2() {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
