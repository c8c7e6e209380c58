//! Second-order forward-mode derivatives.
//!
//! A [`Jet`] carries `(g, g', g'')` of some quantity with respect to a single
//! real input. Pushing jets through the Poincaré iteration gives exact
//! chain-rule derivatives of the Laplace transform and of the Böttcher
//! composition without finite differences.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<T> {
    pub v: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Real> Jet<T> {
    pub fn new(v: T, d1: T, d2: T) -> Self {
        Self { v, d1, d2 }
    }

    pub fn constant(v: T) -> Self {
        Self::new(v, T::zero(), T::zero())
    }

    /// The independent variable itself.
    pub fn variable(v: T) -> Self {
        Self::new(v, T::one(), T::zero())
    }

    pub fn scale(self, k: T) -> Self {
        Self::new(self.v * k, self.d1 * k, self.d2 * k)
    }

    /// Apply a scalar function given its value and first two derivatives at `self.v`.
    #[inline]
    fn chain(self, f0: T, f1: T, f2: T) -> Self {
        Self::new(f0, f1 * self.d1, f2 * self.d1 * self.d1 + f1 * self.d2)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let r = self.v.recip();
        self.chain(self.v.ln(), r, -r * r)
    }

    pub fn ln_1p(self) -> Self {
        let r = (T::one() + self.v).recip();
        self.chain(self.v.ln_1p(), r, -r * r)
    }

    pub fn recip(self) -> Self {
        let r = self.v.recip();
        self.chain(r, -r * r, T::lit(2.0) * r * r * r)
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let h = T::lit(0.5);
        self.chain(s, h / s, -h * h / (s * self.v))
    }
}

impl<T: Real> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl<T: Real> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl<T: Real> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d1, -self.d2)
    }
}

impl<T: Real> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + T::lit(2.0) * self.d1 * o.d1 + self.v * o.d2,
        )
    }
}

impl<T: Real> Div for Jet<T> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Real> Add<T> for Jet<T> {
    type Output = Self;
    fn add(self, k: T) -> Self {
        Self::new(self.v + k, self.d1, self.d2)
    }
}

impl<T: Real> Mul<T> for Jet<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        self.scale(k)
    }
}
