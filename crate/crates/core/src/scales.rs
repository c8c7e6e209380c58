//! Epsilon-indexed scale quantities and the classification of the
//! `omega` regimes.
//!
//! For `W < eps` the lower-tail analysis is organized around
//! `kappa = floor(log(1/eps) / log(a/mu))`, the reduced level
//! `y = eps (a/mu)^kappa in (mu/a, 1]`, the threshold generation `gamma`
//! and the ratio `omega` that decides whether the first non-minimal
//! generation sits at `ceil(gamma)` or one later.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::analytic::Model;
use crate::error::{GwError, Result};
use crate::offspring::OffspringDistribution;
use crate::real::Real;

/// `gamma` within this distance of an integer counts as integral.
pub const INTEGER_TIE: f64 = 1e-12;
pub const OMEGA_LARGE_THRESHOLD: f64 = 100.0;
pub const OMEGA_SMALL_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    OmegaLarge,
    OmegaOrderOne,
    OmegaSmall,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::OmegaLarge => "OMEGA_LARGE",
            Regime::OmegaOrderOne => "OMEGA_ORDER_ONE",
            Regime::OmegaSmall => "OMEGA_SMALL",
        })
    }
}

/// All scale quantities at one `eps`.
///
/// `omega` can exceed the floating-point range for tiny `eps`; `log_omega`
/// is always finite and is what the classifier uses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonScales<T> {
    pub eps: T,
    pub kappa: i64,
    pub y: T,
    pub u1: T,
    pub sigma1_sq: T,
    /// `b(phi(u1))`, negative.
    pub b_phi_u1: T,
    pub h: T,
    pub gamma: T,
    /// `ceil(gamma)` under the tie rule.
    pub gamma_ceil: i64,
    /// `ceil(gamma) - gamma` in `[0, 1)`.
    pub frac_gamma: T,
    pub log_omega: T,
    pub omega: T,
    pub d: i32,
    pub n: i64,
    /// `mu^(kappa - n - 1)`.
    pub big_n: T,
    /// `log Phi_j` for every support point `j > mu`.
    pub log_phi_terms: BTreeMap<u32, T>,
}

impl<T: Real> EpsilonScales<T> {
    pub fn phi_term(&self, j: u32) -> Option<T> {
        self.log_phi_terms.get(&j).map(|l| l.exp())
    }

    pub fn regime(&self) -> Regime {
        classify_log_omega(self.log_omega)
    }
}

/// Scales for a `mu = 1` law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mu1Scales<T> {
    pub gamma: T,
    pub tau: T,
}

pub fn classify_regime<T: Real>(scales: &EpsilonScales<T>) -> Regime {
    scales.regime()
}

/// Classification by `log omega`, so that overflowing `omega` is still ordered.
pub fn classify_log_omega<T: Real>(log_omega: T) -> Regime {
    if log_omega > T::lit(OMEGA_LARGE_THRESHOLD.ln()) {
        Regime::OmegaLarge
    } else if log_omega < T::lit(OMEGA_SMALL_THRESHOLD.ln()) {
        Regime::OmegaSmall
    } else {
        Regime::OmegaOrderOne
    }
}

/// `(ceil(gamma), ceil(gamma) - gamma)` with ties to integers resolved to
/// a zero fractional part.
pub fn ceil_with_tie<T: Real>(gamma: T) -> (i64, T) {
    let r = gamma.round();
    if (gamma - r).abs() < T::lit(INTEGER_TIE) {
        return (r.to_i64().expect("finite gamma"), T::zero());
    }
    let c = gamma.ceil();
    (c.to_i64().expect("finite gamma"), c - gamma)
}

/// `(kappa, log y)` with `y = eps (a/mu)^kappa` in `(mu/a, 1]`.
pub fn kappa_and_log_y<T: Real>(log_inv_eps: T, log_ratio: T) -> (i64, T) {
    let mut kappa = (log_inv_eps / log_ratio).floor().to_i64().expect("finite eps");
    let log_y = |k: i64| T::from_int(k) * log_ratio - log_inv_eps;
    while log_y(kappa) > T::zero() {
        kappa -= 1;
    }
    while log_y(kappa) <= -log_ratio {
        kappa += 1;
    }
    (kappa, log_y(kappa))
}

pub fn mu1_scales<T: Real>(dist: &OffspringDistribution<T>, eps: T) -> Result<Mu1Scales<T>> {
    if dist.min_support() != 1 {
        return Err(GwError::NotMu1);
    }
    if dist.is_degenerate() {
        return Err(GwError::DegenerateLaw);
    }
    if !(eps > T::zero() && eps < T::one()) {
        return Err(GwError::DomainError(format!("eps = {eps} not in (0, 1)")));
    }
    let log_a = dist.mean().ln();
    Ok(Mu1Scales {
        gamma: -eps.ln() / log_a,
        tau: -dist.p_min().ln() / log_a,
    })
}

impl<T: Real> Model<T> {
    fn require_nondegenerate_boettcher(&self) -> Result<()> {
        if self.dist.min_support() < 2 {
            return Err(GwError::Mu1NotSupported);
        }
        if self.dist.is_degenerate() {
            return Err(GwError::DegenerateLaw);
        }
        Ok(())
    }

    /// Scales at `eps` and offset `d`, requiring `n >= 1` and `N >= 2`.
    pub fn compute_scales(&self, eps: T, d: i32) -> Result<EpsilonScales<T>> {
        let s = self.scales_unchecked(eps, d)?;
        if s.n < 1 || s.big_n < T::lit(2.0) {
            return Err(GwError::EpsilonTooLarge {
                eps: eps.as_f64(),
                n: s.n,
                big_n: s.big_n.as_f64(),
            });
        }
        Ok(s)
    }

    /// Scales without the `n >= 1` precondition; `gamma`, `omega` and the
    /// saddle quantities are meaningful for any `eps` in `(0, 1)`.
    pub fn scales_unchecked(&self, eps: T, d: i32) -> Result<EpsilonScales<T>> {
        self.require_nondegenerate_boettcher()?;
        if !(eps > T::zero() && eps < T::one()) {
            return Err(GwError::DomainError(format!("eps = {eps} not in (0, 1)")));
        }
        if !(-1..=1).contains(&d) {
            return Err(GwError::DomainError(format!("d = {d} not in {{-1, 0, 1}}")));
        }
        let dist = &self.dist;
        let mu_i = dist.min_support();
        let lambda = dist.second_support().ok_or(GwError::DegenerateLaw)?;
        let mu = T::from_int(mu_i as i64);
        let log_mu = mu.ln();
        let log_ratio = dist.mean().ln() - log_mu;
        let alpha = dist.alpha().expect("mu >= 2");
        let log_inv_eps = -eps.ln();

        let (kappa, log_y) = kappa_and_log_y(log_inv_eps, log_ratio);
        let y = log_y.exp();
        let saddle = self.solve_u(y, T::one())?;
        let b = saddle.b_phi;
        let gap = T::from_int((lambda - mu_i) as i64);
        let h = (-b * (alpha * log_y).exp() * gap / alpha).ln() / log_mu;
        let gamma = log_inv_eps / log_ratio - log_inv_eps.ln() / log_mu + h;
        let (gamma_ceil, frac_gamma) = ceil_with_tie(gamma);
        let log_omega =
            alpha * (T::one() - mu.powf(-frac_gamma)) * log_inv_eps - log_inv_eps.ln();
        let n = kappa - gamma_ceil - d as i64;
        let big_n_exp = kappa - n - 1;
        let big_n = mu.powi(big_n_exp as i32);
        let log_big_n = T::from_int(big_n_exp) * log_mu;

        let log_p_mu = dist.p_min().ln();
        let mu_n_b = b * mu.powi(n as i32);
        let log_phi_terms = dist
            .probs()
            .iter()
            .filter(|(&j, _)| j > mu_i)
            .map(|(&j, &p)| {
                let lj = p.ln() - T::from_int(j as i64 - 1) / (mu - T::one()) * log_p_mu
                    + log_big_n
                    + T::from_int((j - mu_i) as i64) * mu_n_b;
                (j, lj)
            })
            .collect();

        Ok(EpsilonScales {
            eps,
            kappa,
            y,
            u1: saddle.u_q,
            sigma1_sq: saddle.sigma_sq,
            b_phi_u1: b,
            h,
            gamma,
            gamma_ceil,
            frac_gamma,
            log_omega,
            omega: log_omega.exp(),
            d,
            n,
            big_n,
            log_phi_terms,
        })
    }

    /// `log` of both sides of `exp{(lambda-mu) mu^n b(phi(u1))} =
    /// eps^{alpha mu^{-frac(gamma)-d}}`, computed independently.
    pub fn threshold_identity_logs(&self, s: &EpsilonScales<T>) -> Result<(T, T)> {
        let lambda = self.dist.second_support().ok_or(GwError::DegenerateLaw)?;
        let mu_i = self.dist.min_support();
        let mu = T::from_int(mu_i as i64);
        let alpha = self.dist.alpha().ok_or(GwError::Mu1NotSupported)?;
        let lhs = T::from_int((lambda - mu_i) as i64) * mu.powi(s.n as i32) * s.b_phi_u1;
        let rhs = alpha * mu.powf(-s.frac_gamma - T::from_int(s.d as i64)) * s.eps.ln();
        Ok((lhs, rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f64> {
        Model::with_defaults(OffspringDistribution::new([(2, 0.5), (3, 0.5)]).unwrap())
    }

    #[test]
    fn kappa_and_y_at_one_in_a_thousand() {
        let s = model().compute_scales(1e-3, 0).unwrap();
        assert_eq!(s.kappa, 30);
        assert!((s.y - 1e-3 * 1.25f64.powi(30)).abs() < 1e-12);
        assert!((s.y - 0.8078).abs() < 1e-4);
    }

    #[test]
    fn shift_in_d_moves_n_and_big_n() {
        let m = model();
        let s0 = m.compute_scales(1e-6, 0).unwrap();
        let s1 = m.compute_scales(1e-6, 1).unwrap();
        assert_eq!(s0.n - s1.n, 1);
        assert!((s1.big_n / s0.big_n - 2.0).abs() < 1e-15);
        assert_eq!(s0.kappa - s0.n, s0.gamma_ceil);
    }

    #[test]
    fn periodicity_of_h_and_y() {
        let m = model();
        for &eps in &[3e-3, 1e-5, 7.7e-9] {
            let a = m.compute_scales(eps, 0).unwrap();
            let b = m.compute_scales(eps * 0.8, 0).unwrap();
            assert!((a.h - b.h).abs() < 1e-8);
            assert!((a.y - b.y).abs() < 1e-10);
            assert_eq!(b.kappa, a.kappa + 1);
        }
    }

    #[test]
    fn omega_definition_self_check() {
        let m = model();
        let s = m.compute_scales(1e-5, 0).unwrap();
        let alpha = m.dist.alpha().unwrap();
        let l = -(1e-5f64).ln();
        let back = s.omega * l * (1e-5f64).powf(-alpha * (2f64.powf(-s.frac_gamma) - 1.0));
        assert!((back - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_identity() {
        let m = model();
        for &eps in &[1e-3, 1e-6, 1e-9] {
            for d in [0, 1] {
                let s = m.compute_scales(eps, d).unwrap();
                let (lhs, rhs) = m.threshold_identity_logs(&s).unwrap();
                assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0), "{lhs} {rhs}");
            }
        }
    }

    #[test]
    fn regime_thresholds_and_tie_rule() {
        assert_eq!(classify_log_omega(1e6f64.ln()), Regime::OmegaLarge);
        assert_eq!(classify_log_omega(0.0f64), Regime::OmegaOrderOne);
        assert_eq!(classify_log_omega(1e-3f64.ln()), Regime::OmegaSmall);
        assert_eq!(ceil_with_tie(3.0 + 1e-13), (3, 0.0));
        let (c, f) = ceil_with_tie(2.25f64);
        assert_eq!(c, 3);
        assert!((f - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejections() {
        let m = model();
        assert!(matches!(
            m.compute_scales(0.3, 0),
            Err(GwError::EpsilonTooLarge { .. })
        ));
        let deg = Model::with_defaults(OffspringDistribution::new([(2, 1.0)]).unwrap());
        assert_eq!(deg.compute_scales(1e-3, 0), Err(GwError::DegenerateLaw));
        let one = Model::with_defaults(OffspringDistribution::new([(1, 0.5), (2, 0.5)]).unwrap());
        assert_eq!(one.compute_scales(1e-3, 0), Err(GwError::Mu1NotSupported));
    }

    #[test]
    fn mu1_scale_values() {
        let d = OffspringDistribution::new([(1, 0.5), (2, 0.5)]).unwrap();
        let s = mu1_scales(&d, 0.01f64).unwrap();
        assert!((s.gamma - 11.358).abs() < 1e-3);
        assert!((s.tau - 1.7095).abs() < 1e-4);
        let two = OffspringDistribution::new([(2, 0.5), (3, 0.5)]).unwrap();
        assert_eq!(mu1_scales(&two, 0.01), Err(GwError::NotMu1));
        let deg = OffspringDistribution::new([(1, 1.0)]);
        // a = 1 is not supercritical, so the degenerate mu = 1 law never validates
        assert!(deg.is_err());
    }
}
