//! Closed-form saddle asymptotics of the lower tail and the limiting
//! constants of the conditional law.

use serde::Serialize;

use super::{LogProb, Method};
use crate::analytic::Model;
use crate::error::{GwError, Result};
use crate::offspring::OffspringDistribution;
use crate::real::Real;
use crate::scales::{mu1_scales, EpsilonScales};

/// Largest `mu^kappa psi_n(phi(u1))` for which the saddle integral is
/// treated as Gaussian (the `O(1)` validity condition).
pub const GAUSSIAN_VALIDITY_BOUND: f64 = 10.0;

/// Lower tail of a sum of `q mu^(kappa-n)` copies of `W` at
/// `eps a^(kappa-n)`, with the integral correction set to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SumAsymptotic<T> {
    pub log_prob: LogProb<T>,
    pub copies: T,
    pub x: T,
    /// `mu^kappa psi_n(phi(u_q))`.
    pub mu_kappa_psi: T,
    /// Whether `mu^kappa psi_n(phi(u1))` is small enough for the
    /// Gaussian approximation of the inversion integral to apply.
    pub gaussian_valid: bool,
}

/// Limiting constant of the normalized excess `Z_K - mu^K` and its scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtraOffspring<T> {
    pub c: T,
    /// `mu^k eps^(alpha mu^(gamma - k))` at `k = kappa - n`.
    pub normalizer: T,
    pub log_normalizer: T,
}

/// Shape of the `mu = 1` conditional bound: `P(K <= gamma - x | W < eps)`
/// decays like `exp(rate * x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mu1Bound<T> {
    pub gamma: T,
    pub tau: T,
    /// `log p_1`.
    pub rate: T,
    /// `exp(rate * x)` at the requested `x`, constants omitted.
    pub decay_at_x: T,
}

impl<T: Real> Model<T> {
    fn require_tail_law(&self) -> Result<()> {
        if self.dist.min_support() < 2 {
            return Err(GwError::Mu1NotSupported);
        }
        if self.dist.is_degenerate() {
            return Err(GwError::DegenerateLaw);
        }
        Ok(())
    }

    /// Saddle asymptotics of `log P(W < eps)`.
    ///
    /// `abs_err_log` is the size `1 / (mu^kappa sigma1^2 u1^2)` of the first
    /// neglected Laplace-method correction, a scale rather than a bound.
    pub fn tail_w_asymptotic(&self, eps: T) -> Result<LogProb<T>> {
        self.require_tail_law()?;
        let s = self.scales_unchecked(eps, 0)?;
        let mu = T::from_int(self.dist.min_support() as i64);
        let mu_kappa = mu.powi(s.kappa as i32);
        let log_value = -self.dist.p_min().ln() / (mu - T::one())
            - (s.sigma1_sq.sqrt() * s.u1 * (T::lit(2.0) * T::PI()).sqrt()).ln()
            - T::from_int(s.kappa) * T::lit(0.5) * mu.ln()
            + mu_kappa * (s.b_phi_u1 + s.y * s.u1);
        let scale = (mu_kappa * s.sigma1_sq * s.u1 * s.u1).recip();
        Ok(LogProb::new(log_value, scale, Method::Asymptotic))
    }

    /// `log(mu^kappa psi_n(phi(u)))`.
    pub(crate) fn log_mu_kappa_psi(&self, kappa: i64, n: i64, u: T) -> Result<T> {
        if n < 0 {
            return Err(GwError::DomainError(format!("psi index {n} is negative")));
        }
        let mu = T::from_int(self.dist.min_support() as i64);
        let s = self.phi_real(u)?;
        Ok(T::from_int(kappa) * mu.ln() + self.log_psi(n as usize, s)?)
    }

    /// Saddle asymptotics of `P(sum of q mu^(kappa-n) copies < eps a^(kappa-n))`.
    pub fn tail_sum_asymptotic(&self, s: &EpsilonScales<T>, q: T) -> Result<SumAsymptotic<T>> {
        self.require_tail_law()?;
        let mu = T::from_int(self.dist.min_support() as i64);
        let shift = s.kappa - s.n;
        let copies = q * mu.powi(shift as i32);
        if (copies - copies.round()).abs() > T::lit(1e-9) * copies.max(T::one()) {
            return Err(GwError::NonIntegralCopies {
                copies: copies.as_f64(),
            });
        }
        let copies = copies.round();
        let saddle = self.solve_u(s.y, q)?;
        let u = saddle.u_q;
        let mu_kappa = mu.powi(s.kappa as i32);
        let mu_kappa_psi = self.log_mu_kappa_psi(s.kappa, s.n, u)?.exp();
        let mu_kappa_psi_1 = self.log_mu_kappa_psi(s.kappa, s.n, s.u1)?.exp();
        let log_value = -copies / (mu - T::one()) * self.dist.p_min().ln()
            - (saddle.sigma_sq.sqrt() * u * (T::lit(2.0) * T::PI() * q).sqrt()).ln()
            - T::from_int(s.kappa) * T::lit(0.5) * mu.ln()
            + mu_kappa * (q * saddle.b_phi + s.y * u)
            - q * mu_kappa_psi;
        let scale = (mu_kappa * saddle.sigma_sq * u * u).recip();
        Ok(SumAsymptotic {
            log_prob: LogProb::new(log_value, scale, Method::Asymptotic),
            copies,
            x: s.eps * self.dist.mean().powi(shift as i32),
            mu_kappa_psi,
            gaussian_valid: mu_kappa_psi_1 <= T::lit(GAUSSIAN_VALIDITY_BOUND),
        })
    }

    /// `h(q) = q b(phi(u_q)) + y u_q`, the exponent of the sum asymptotics.
    pub fn saddle_exponent(&self, y: T, q: T) -> Result<T> {
        let sol = self.solve_u(y, q)?;
        Ok(q * sol.b_phi + y * sol.u_q)
    }

    /// Predicted `P(K > kappa - n | W < eps) = exp(-mu^kappa psi_n(phi(u1)))`
    /// together with `mu^kappa psi_n(phi(u1))` itself.
    pub fn predicted_k_tail(&self, s: &EpsilonScales<T>) -> Result<(T, T)> {
        self.require_tail_law()?;
        let m = self.log_mu_kappa_psi(s.kappa, s.n, s.u1)?.exp();
        Ok(((-m).exp(), m))
    }

    /// `C = (lambda/mu - 1) p_lambda p_mu^(-(lambda-1)/(mu-1))` and the scale
    /// `mu^k eps^(alpha mu^(gamma-k))` at `k = kappa - n`.
    pub fn extra_offspring_prediction(&self, s: &EpsilonScales<T>) -> Result<ExtraOffspring<T>> {
        let c = extra_offspring_constant(&self.dist)?;
        let mu = T::from_int(self.dist.min_support() as i64);
        let alpha = self.dist.alpha().ok_or(GwError::Mu1NotSupported)?;
        let k = T::from_int(s.kappa - s.n);
        let log_normalizer = k * mu.ln() + alpha * mu.powf(s.gamma - k) * s.eps.ln();
        Ok(ExtraOffspring {
            c,
            normalizer: log_normalizer.exp(),
            log_normalizer,
        })
    }
}

pub fn extra_offspring_constant<T: Real>(dist: &OffspringDistribution<T>) -> Result<T> {
    if dist.min_support() < 2 {
        return Err(GwError::Mu1NotSupported);
    }
    let lambda = dist.second_support().ok_or(GwError::DegenerateLaw)?;
    let mu_i = dist.min_support();
    let mu = T::from_int(mu_i as i64);
    let l = T::from_int(lambda as i64);
    Ok((l / mu - T::one())
        * dist.prob(lambda)
        * dist.p_min().powf(-(l - T::one()) / (mu - T::one())))
}

/// `log` of the normalizer `mu^k eps^(alpha mu^(gamma-k))` of the excess
/// statistic at an arbitrary generation `k`.
pub fn log_excess_normalizer<T: Real>(
    dist: &OffspringDistribution<T>,
    eps: T,
    gamma: T,
    k: i64,
) -> Result<T> {
    let mu = T::from_int(dist.min_support() as i64);
    let alpha = dist.alpha().ok_or(GwError::Mu1NotSupported)?;
    let k = T::from_int(k);
    Ok(k * mu.ln() + alpha * mu.powf(gamma - k) * eps.ln())
}

pub fn mu1_conditional_bound<T: Real>(
    dist: &OffspringDistribution<T>,
    eps: T,
    x: T,
) -> Result<Mu1Bound<T>> {
    let s = mu1_scales(dist, eps)?;
    let rate = dist.p_min().ln();
    Ok(Mu1Bound {
        gamma: s.gamma,
        tau: s.tau,
        rate,
        decay_at_x: (rate * x).exp(),
    })
}

/// `log P(K > k) = ((mu^k - 1)/(mu - 1)) log p_mu`, or `k log p_1` when
/// `mu = 1`: the first `k` generations are all minimal.
pub fn log_minimal_prefix_prob<T: Real>(dist: &OffspringDistribution<T>, k: i64) -> T {
    let mu = T::from_int(dist.min_support() as i64);
    let log_p = dist.p_min().ln();
    if dist.min_support() == 1 {
        return T::from_int(k) * log_p;
    }
    (mu.powi(k as i32) - T::one()) / (mu - T::one()) * log_p
}
