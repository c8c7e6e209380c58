//! Offspring law of the branching process and its generating function.

use std::collections::BTreeMap;

use crate::cmath::{self, re, C};
use crate::error::{GwError, Result};
use crate::jet::Jet;
use crate::real::Real;

/// Finite-support offspring law with `p_0 = 0` and mean `a > 1`.
///
/// Immutable after construction. The generating function is stored densely,
/// together with the coefficients of the complement `1 - f(1 - v)` and the
/// ratios `p_{mu+l} / p_mu` used by the log-space iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution<T> {
    probs: BTreeMap<u32, T>,
    mean: T,
    variance: T,
    min_support: u32,
    second_support: Option<u32>,
    beta: Option<T>,
    alpha: Option<T>,
    coeffs: Vec<T>,
    complement: Vec<T>,
    ratios: Vec<T>,
}

impl<T: Real> OffspringDistribution<T> {
    /// Validate and renormalize a law given as `count -> probability`.
    pub fn new<I>(probs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, T)>,
    {
        let raw: BTreeMap<u32, T> = probs.into_iter().collect();
        if raw.is_empty() {
            return Err(GwError::EmptyDistribution);
        }
        if raw.contains_key(&0) {
            return Err(GwError::ZeroOffspringMass);
        }
        for (&count, &p) in &raw {
            if !(p > T::zero() && p <= T::one()) {
                return Err(GwError::InvalidProbability {
                    count,
                    value: p.as_f64(),
                });
            }
        }
        let sum: f64 = raw.values().map(|p| p.as_f64()).sum();
        let tol = 1e-12_f64.max(16.0 * T::epsilon().as_f64());
        if (sum - 1.0).abs() > tol {
            return Err(GwError::NotNormalized { sum });
        }
        let probs: BTreeMap<u32, T> = raw
            .into_iter()
            .map(|(k, p)| (k, T::lit(p.as_f64() / sum)))
            .collect();

        let mean_f: f64 = probs.iter().map(|(&k, p)| k as f64 * p.as_f64()).sum();
        if mean_f <= 1.0 + 1e-15 {
            return Err(GwError::Subcritical { mean: mean_f });
        }
        let second_f: f64 = probs
            .iter()
            .map(|(&k, p)| (k as f64) * (k as f64) * p.as_f64())
            .sum();
        let variance_f = (second_f - mean_f * mean_f).max(0.0);

        let mut support = probs.keys().copied();
        let min_support = support.next().expect("non-empty");
        let second_support = support.next();
        let (beta, alpha) = if min_support >= 2 {
            let b = (min_support as f64).ln() / mean_f.ln();
            (Some(T::lit(b)), Some(T::lit(b / (1.0 - b))))
        } else {
            (None, None)
        };

        let degree = *probs.keys().next_back().expect("non-empty") as usize;
        let mut coeffs_f = vec![0.0_f64; degree + 1];
        for (&k, p) in &probs {
            coeffs_f[k as usize] = p.as_f64();
        }
        // 1 - f(1 - v) = sum_{k>=1} c_k v^k, c_k = (-1)^{k+1} sum_j p_j C(j, k)
        let mut complement = vec![T::zero(); degree + 1];
        for (k, slot) in complement.iter_mut().enumerate().skip(1) {
            let mut c = 0.0_f64;
            for (j, &pj) in coeffs_f.iter().enumerate().skip(k) {
                c += pj * binomial(j, k);
            }
            *slot = T::lit(if k % 2 == 1 { c } else { -c });
        }
        let p_min = coeffs_f[min_support as usize];
        let ratios = coeffs_f[min_support as usize..]
            .iter()
            .map(|&p| T::lit(p / p_min))
            .collect();

        Ok(Self {
            probs,
            mean: T::lit(mean_f),
            variance: T::lit(variance_f),
            min_support,
            second_support,
            beta,
            alpha,
            coeffs: coeffs_f.into_iter().map(T::lit).collect(),
            complement,
            ratios,
        })
    }

    pub fn probs(&self) -> &BTreeMap<u32, T> {
        &self.probs
    }

    pub fn prob(&self, count: u32) -> T {
        self.probs.get(&count).copied().unwrap_or_else(T::zero)
    }

    /// Mean offspring number `a`.
    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    /// Minimal offspring number `mu`.
    pub fn min_support(&self) -> u32 {
        self.min_support
    }

    /// Second support point `lambda`; absent for the degenerate law `p_mu = 1`.
    pub fn second_support(&self) -> Option<u32> {
        self.second_support
    }

    pub fn max_support(&self) -> u32 {
        (self.coeffs.len() - 1) as u32
    }

    /// `log mu / log a`, defined when `mu >= 2`.
    pub fn beta(&self) -> Option<T> {
        self.beta
    }

    /// `beta / (1 - beta)`, defined when `mu >= 2`.
    pub fn alpha(&self) -> Option<T> {
        self.alpha
    }

    pub fn p_min(&self) -> T {
        self.prob(self.min_support)
    }

    pub fn is_degenerate(&self) -> bool {
        self.second_support.is_none()
    }

    /// `E W^2 = 1 + Var(N) / (a^2 - a)` for the normalized martingale limit.
    pub fn second_moment_w(&self) -> T {
        T::one() + self.variance_w()
    }

    pub fn variance_w(&self) -> T {
        self.variance / (self.mean * self.mean - self.mean)
    }

    fn check_disk(z: C<T>) -> Result<()> {
        if !(z.norm() <= T::one() + T::lit(8.0) * T::epsilon()) {
            return Err(GwError::DomainError(format!(
                "|z| = {} exceeds 1",
                z.norm()
            )));
        }
        Ok(())
    }

    /// Generating function `f(z) = sum p_j z^j` on the closed unit disk.
    pub fn pgf_eval(&self, z: C<T>) -> Result<C<T>> {
        Self::check_disk(z)?;
        Ok(self.eval(z))
    }

    /// `m`-fold iterate `f_m(z)`.
    pub fn pgf_iterate(&self, m: usize, z: C<T>) -> Result<C<T>> {
        Self::check_disk(z)?;
        let mut w = z;
        for _ in 0..m {
            w = self.eval(w);
        }
        Ok(w)
    }

    /// First or second derivative of `f`.
    pub fn pgf_prime(&self, z: C<T>, order: u8) -> Result<C<T>> {
        Self::check_disk(z)?;
        match order {
            1 => Ok(self.eval_prime(z)),
            2 => Ok(self.eval_second(z)),
            _ => Err(GwError::DomainError(format!(
                "derivative order {order} not in {{1, 2}}"
            ))),
        }
    }

    /// Horner evaluation without the disk check; `f` is a polynomial.
    pub(crate) fn eval(&self, z: C<T>) -> C<T> {
        self.coeffs
            .iter()
            .rev()
            .fold(re(T::zero()), |acc, &c| acc * z + re(c))
    }

    pub(crate) fn eval_prime(&self, z: C<T>) -> C<T> {
        let mut acc = re(T::zero());
        for (j, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * z + re(c * T::from_int(j as i64));
        }
        acc
    }

    pub(crate) fn eval_second(&self, z: C<T>) -> C<T> {
        let mut acc = re(T::zero());
        for (j, &c) in self.coeffs.iter().enumerate().skip(2).rev() {
            acc = acc * z + re(c * T::from_int((j * (j - 1)) as i64));
        }
        acc
    }

    /// `1 - f(1 - v)`, keeping full relative precision for small `v`.
    pub(crate) fn complement_eval(&self, v: C<T>) -> C<T> {
        self.complement
            .iter()
            .rev()
            .fold(re(T::zero()), |acc, &c| acc * v + re(c))
    }

    pub(crate) fn complement_eval_jet(&self, v: Jet<T>) -> Jet<T> {
        self.complement
            .iter()
            .rev()
            .fold(Jet::constant(T::zero()), |acc, &c| acc * v + c)
    }

    /// `rho(L) = sum_{l>=1} (p_{mu+l}/p_mu) e^{lL}`, so that
    /// `f(e^L) = p_mu e^{mu L} (1 + rho(L))`.
    pub(crate) fn rho(&self, l: C<T>) -> C<T> {
        let e = l.exp();
        self.ratios
            .iter()
            .skip(1)
            .rev()
            .fold(re(T::zero()), |acc, &r| (acc + re(r)) * e)
    }

    pub(crate) fn rho_jet(&self, l: Jet<T>) -> Jet<T> {
        let e = l.exp();
        self.ratios
            .iter()
            .skip(1)
            .rev()
            .fold(Jet::constant(T::zero()), |acc, &r| (acc + r) * e)
    }

    /// `log(f(e^L) / (p_mu e^{mu L})) = log(1 + rho(L))`.
    ///
    /// Errors when the ratio enters a `1e-12` disk around zero: the
    /// iterate `f_{j+1}` vanishes relative to `p_mu f_j^mu` and the
    /// logarithmic Böttcher series leaves its domain.
    pub(crate) fn log_ratio(&self, l: C<T>) -> Result<C<T>> {
        let rho = self.rho(l);
        if !rho.re.is_finite() || !rho.im.is_finite() {
            return Err(GwError::DomainError("iterate overflowed".into()));
        }
        if (re(T::one()) + rho).norm() < T::lit(1e-12) {
            return Err(GwError::DomainError(
                "generating-function iterate vanishes".into(),
            ));
        }
        Ok(cmath::ln_1p(rho))
    }

    pub(crate) fn log_ratio_jet(&self, l: Jet<T>) -> Jet<T> {
        self.rho_jet(l).ln_1p()
    }

    /// One Poincaré step in log coordinates: `log f(e^L)`.
    ///
    /// For `Re L <= 0` the lowest power is factored out; otherwise the
    /// highest, so the step stays finite on both sides of the unit circle.
    pub(crate) fn log_step(&self, l: C<T>) -> Result<C<T>> {
        if l.re <= T::zero() {
            let mu = T::from_int(self.min_support as i64);
            Ok(l * mu + re(self.p_min().ln()) + self.log_ratio(l)?)
        } else {
            let d = self.coeffs.len() - 1;
            let e = (-l).exp();
            let mut acc = re(T::zero());
            for &c in &self.coeffs {
                acc = acc * e + re(c);
            }
            // acc = sum_j p_j e^{(j-D)L}
            if acc.norm() == T::zero() {
                return Err(GwError::DomainError(
                    "generating-function iterate vanishes".into(),
                ));
            }
            Ok(l * T::from_int(d as i64) + acc.ln())
        }
    }

    pub(crate) fn log_step_jet(&self, l: Jet<T>) -> Jet<T> {
        if l.v <= T::zero() {
            let mu = T::from_int(self.min_support as i64);
            l * mu + self.p_min().ln() + self.log_ratio_jet(l)
        } else {
            let d = self.coeffs.len() - 1;
            let e = (-l).exp();
            let mut acc = Jet::constant(T::zero());
            for &c in &self.coeffs {
                acc = acc * e + c;
            }
            l * T::from_int(d as i64) + acc.ln()
        }
    }

    /// `log f_m(z)` computed entirely in log coordinates, so iterates far
    /// below the floating-point range stay representable.
    pub fn log_pgf_iterate(&self, m: usize, z: C<T>) -> Result<C<T>> {
        Self::check_disk(z)?;
        if z.norm() == T::zero() {
            return Err(GwError::DomainError("log f_m(0) is undefined".into()));
        }
        let mut l = z.ln();
        for _ in 0..m {
            l = self.log_step(l)?;
        }
        Ok(l)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn law(pairs: &[(u32, f64)]) -> OffspringDistribution<f64> {
        OffspringDistribution::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn derived_constants_of_the_test_law() {
        let d = law(&[(2, 0.5), (3, 0.5)]);
        assert_relative_eq!(d.mean(), 2.5);
        assert_eq!(d.min_support(), 2);
        assert_eq!(d.second_support(), Some(3));
        // log 2 / log 2.5 and beta / (1 - beta)
        assert_relative_eq!(d.beta().unwrap(), 0.756471, epsilon = 1e-6);
        assert_relative_eq!(d.alpha().unwrap(), 3.10629, epsilon = 1e-5);
        assert_relative_eq!(d.second_moment_w(), 1.0 + 0.25 / 3.75, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_and_mu1_laws() {
        let d = law(&[(2, 1.0)]);
        assert_relative_eq!(d.mean(), 2.0);
        assert_eq!(d.second_support(), None);
        assert!(d.is_degenerate());

        let d = law(&[(1, 0.5), (2, 0.5)]);
        assert_relative_eq!(d.mean(), 1.5);
        assert_eq!(d.min_support(), 1);
        assert!(d.beta().is_none() && d.alpha().is_none());
    }

    #[test]
    fn rejects_invalid_laws() {
        let e = OffspringDistribution::new([(0u32, 0.5_f64), (2, 0.5)]).unwrap_err();
        assert_eq!(e, GwError::ZeroOffspringMass);
        let e = OffspringDistribution::new([(2u32, 0.5_f64), (3, 0.4)]).unwrap_err();
        assert!(matches!(e, GwError::NotNormalized { .. }));
        let e = OffspringDistribution::new([(1u32, 1.0_f64)]).unwrap_err();
        assert!(matches!(e, GwError::Subcritical { .. }));
        let e = OffspringDistribution::new([(2u32, -0.5_f64), (3, 1.5)]).unwrap_err();
        assert!(matches!(e, GwError::InvalidProbability { .. }));
        let e = OffspringDistribution::<f64>::new([]).unwrap_err();
        assert_eq!(e, GwError::EmptyDistribution);
    }

    #[test]
    fn renormalizes_within_tolerance() {
        let d = law(&[(2, 0.5 + 4e-13), (3, 0.5)]);
        let s: f64 = d.probs().values().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pgf_values() {
        let d = law(&[(2, 0.5), (3, 0.5)]);
        assert_eq!(d.pgf_eval(re(0.0)).unwrap(), re(0.0));
        assert_relative_eq!(d.pgf_eval(re(1.0)).unwrap().re, 1.0);
        assert_relative_eq!(d.pgf_eval(re(0.5)).unwrap().re, 0.1875);
        assert_relative_eq!(d.pgf_iterate(0, re(0.7)).unwrap().re, 0.7);
        assert_relative_eq!(d.pgf_iterate(2, re(0.5)).unwrap().re, 0.0208740234375);
        assert_relative_eq!(d.pgf_prime(re(1.0), 1).unwrap().re, 2.5);
        assert_eq!(d.pgf_prime(re(0.0), 1).unwrap(), re(0.0));
        assert_relative_eq!(d.pgf_prime(re(0.5), 1).unwrap().re, 0.875);
        assert!(matches!(
            d.pgf_eval(C::new(0.9, 0.5)),
            Err(GwError::DomainError(_))
        ));
    }

    #[test]
    fn iterates_decrease_on_the_unit_interval() {
        let d = law(&[(2, 0.5), (3, 0.5)]);
        let mut prev = 0.9;
        for m in 1..=10 {
            let v = d.pgf_iterate(m, re(0.9)).unwrap().re;
            assert!(v > 0.0 && v < prev, "m={m}");
            prev = v;
        }
    }

    #[test]
    fn complement_matches_direct() {
        let d = law(&[(2, 0.2), (3, 0.3), (5, 0.5)]);
        for &v in &[1e-3, 0.1, 0.3] {
            let z = C::new(v, 0.05);
            let want = re(1.0) - d.eval(re(1.0) - z);
            assert!((d.complement_eval(z) - want).norm() < 1e-14);
        }
        // the complement is accurate where the direct form cancels
        let v = 1e-12;
        assert_relative_eq!(d.complement_eval(re(v)).re, d.mean() * v, max_relative = 1e-10);
    }

    #[test]
    fn log_step_matches_direct_on_both_sides() {
        let d = law(&[(2, 0.2), (3, 0.3), (5, 0.5)]);
        for &z in &[C::new(0.4, 0.1), C::new(1.3, -0.2), C::new(0.02, 0.0)] {
            let l = d.log_step(z.ln()).unwrap();
            let want = d.eval(z).ln();
            assert!((l.exp() - want.exp()).norm() < 1e-13 * want.exp().norm());
        }
    }

    #[test]
    fn log_iterate_agrees_and_survives_underflow() {
        let d = law(&[(2, 0.5), (3, 0.5)]);
        let z = re(0.5);
        let direct = d.pgf_iterate(4, z).unwrap().ln();
        let logv = d.log_pgf_iterate(4, z).unwrap();
        assert!((direct - logv).norm() < 1e-12);
        let deep = d.log_pgf_iterate(14, z).unwrap();
        assert!(deep.re < -1e4 && deep.re.is_finite());
    }

    #[test]
    fn f32_instantiation() {
        let d = OffspringDistribution::<f32>::new([(2u32, 0.5_f32), (3, 0.5)]).unwrap();
        assert!((d.pgf_eval(re(0.5_f32)).unwrap().re - 0.1875).abs() < 1e-6);
    }
}
