//! Complex helpers missing from `num-complex` that keep full relative
//! precision for small arguments.

use num_complex::Complex;

use crate::real::Real;

pub type C<T> = Complex<T>;

#[inline]
pub fn re<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

/// `log(1 + z)` accurate when `|z|` is small.
pub fn ln_1p<T: Real>(z: C<T>) -> C<T> {
    let (x, y) = (z.re, z.im);
    if z.norm() > T::lit(0.5) {
        return (C::new(T::one() + x, y)).ln();
    }
    // |1+z|^2 - 1 = 2x + x^2 + y^2
    let m = x * (T::lit(2.0) + x) + y * y;
    C::new(T::lit(0.5) * m.ln_1p(), y.atan2(T::one() + x))
}

/// `exp(z) - 1` accurate when `|z|` is small.
pub fn exp_m1<T: Real>(z: C<T>) -> C<T> {
    let (x, y) = (z.re, z.im);
    let half = T::lit(0.5);
    let s = (half * y).sin();
    // e^x cos y - 1 = expm1(x) cos y - 2 sin^2(y/2)
    C::new(
        x.exp_m1() * y.cos() - T::lit(2.0) * s * s,
        x.exp() * y.sin(),
    )
}

/// Principal-branch `log(sum exp(z_i))` for complex terms, scaled by the
/// largest real part. Returns `None` if the sum vanishes.
pub fn log_sum_exp<T: Real>(zs: &[C<T>]) -> Option<C<T>> {
    let hi = zs.iter().map(|z| z.re).fold(T::neg_infinity(), T::max);
    if hi == T::neg_infinity() {
        return None;
    }
    let s = zs
        .iter()
        .fold(C::new(T::zero(), T::zero()), |acc, z| acc + (*z - re(hi)).exp());
    if s.norm() == T::zero() {
        return None;
    }
    Some(re(hi) + s.ln())
}
