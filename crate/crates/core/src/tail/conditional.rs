//! The exact joint law of `(K, W)` and the conditional law of `K` given
//! `W < eps`, where `K = min{k : Z_k > mu^k}`.
//!
//! Decomposing the tree by ancestry, `{K > k}` means the first `k`
//! generations are all minimal, after which `W` is `a^(-k)` times a sum of
//! `mu^k` independent copies. Hence
//!
//! ```text
//! log P(K > k, W < eps) = log P(K > k) + log P(S_{mu^k} < eps a^k)
//! ```
//!
//! exactly, and the conditional pmf follows by differencing in `k`.

use serde::Serialize;

use super::asymptotic::log_minimal_prefix_prob;
use super::{LogProb, Method};
use crate::analytic::Model;
use crate::error::{GwError, Result};
use crate::real::Real;

/// Largest absolute log error on the joints for which the inversion route
/// is used; beyond it the conditional law falls back to the asymptotics.
pub const INVERSION_PMF_TOLERANCE: f64 = 0.05;
/// Adjacent joints closer than this multiple of their combined error are
/// flagged as dominated by cancellation.
pub const CANCELLATION_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KPmfEntry<T> {
    pub k: i64,
    pub prob: T,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KPmf<T> {
    pub eps: T,
    pub entries: Vec<KPmfEntry<T>>,
    pub method: Method,
    /// Largest absolute error estimate on any entry.
    pub abs_err: T,
}

impl<T: Real> KPmf<T> {
    pub fn prob(&self, k: i64) -> T {
        self.entries
            .iter()
            .find(|e| e.k == k)
            .map_or(T::zero(), |e| e.prob)
    }

    pub fn total(&self) -> T {
        self.entries.iter().fold(T::zero(), |a, e| a + e.prob)
    }
}

/// `P(K = k | .)` for consecutive `k` from the log survival values
/// `log P(K > k | .)`, starting at `k_lo - 1`.
fn pmf_from_log_survival<T: Real>(surv: &[T]) -> Vec<T> {
    surv.windows(2)
        .map(|w| {
            if w[0] == T::neg_infinity() {
                T::zero()
            } else {
                (w[0].exp() * -(w[1] - w[0]).exp_m1()).max(T::zero())
            }
        })
        .collect()
}

impl<T: Real> Model<T> {
    /// `log P(K > k, W < eps)` through the exact ancestry identity.
    pub fn exact_joint(&self, eps: T, k: i64) -> Result<LogProb<T>> {
        if k < 0 {
            return Err(GwError::DomainError(format!("k = {k} is negative")));
        }
        let mu = T::from_int(self.dist.min_support() as i64);
        let copies = mu.powi(k as i32);
        let x = eps * self.dist.mean().powi(k as i32);
        let tail = self.tail_sum_numeric(x, copies, None)?;
        Ok(LogProb::new(
            log_minimal_prefix_prob(&self.dist, k) + tail.log_value,
            tail.abs_err_log,
            Method::ExactIdentity,
        ))
    }

    /// Conditional law of `K` given `W < eps` on `k_lo..=k_hi`.
    ///
    /// Uses the exact identity with numerical inversion while its error
    /// stays below [`INVERSION_PMF_TOLERANCE`]; otherwise, for `mu >= 2`,
    /// the asymptotic survival `P(K > k | W < eps) ~ exp(-mu^kappa
    /// psi_(kappa-k)(phi(u1)))`.
    pub fn conditional_k_pmf(&self, eps: T, k_lo: i64, k_hi: i64) -> Result<KPmf<T>> {
        if k_lo < 1 || k_hi < k_lo {
            return Err(GwError::DomainError(format!(
                "k range {k_lo}..={k_hi} must be nonempty and start at 1 or later"
            )));
        }
        match self.k_pmf_inversion(eps, k_lo, k_hi) {
            Ok(pmf) => Ok(pmf),
            Err(err @ GwError::CancellationLoss) | Err(err @ GwError::QuadratureDiverged(_))
            | Err(err @ GwError::DepthExceeded { .. }) => {
                if self.dist.min_support() < 2 {
                    return Err(err);
                }
                log::debug!("inversion route unavailable at eps = {eps}: {err}");
                self.k_pmf_asymptotic(eps, k_lo, k_hi)
            }
            Err(e) => Err(e),
        }
    }

    fn k_pmf_inversion(&self, eps: T, k_lo: i64, k_hi: i64) -> Result<KPmf<T>> {
        let base = self.exact_joint(eps, 0)?;
        let mut joints = Vec::new();
        for k in (k_lo - 1)..=k_hi {
            let j = if k == 0 { base } else { self.exact_joint(eps, k)? };
            if j.abs_err_log + base.abs_err_log > T::lit(INVERSION_PMF_TOLERANCE) {
                return Err(GwError::CancellationLoss);
            }
            joints.push(j);
        }
        // nonincreasing, nonpositive conditional log survival
        let mut surv = Vec::with_capacity(joints.len());
        let mut run = T::zero();
        for j in &joints {
            run = run.min(j.log_value - base.log_value);
            surv.push(run);
        }
        let probs = pmf_from_log_survival(&surv);
        let mut entries = Vec::new();
        let mut abs_err = T::zero();
        for (i, p) in probs.into_iter().enumerate() {
            let (prev, cur) = (joints[i], joints[i + 1]);
            let combined = prev.abs_err_log + cur.abs_err_log + T::lit(2.0) * base.abs_err_log;
            let gap = prev.log_value - cur.log_value;
            let reliable = gap >= T::lit(CANCELLATION_FACTOR) * combined;
            abs_err = abs_err.max(surv[i].exp() * combined);
            entries.push(KPmfEntry {
                k: k_lo + i as i64,
                prob: p,
                reliable,
            });
        }
        if entries.iter().all(|e| !e.reliable) {
            return Err(GwError::CancellationLoss);
        }
        Ok(KPmf {
            eps,
            entries,
            method: Method::ExactIdentity,
            abs_err,
        })
    }

    /// Conditional law of `K` from the asymptotic survival function alone.
    pub fn k_pmf_asymptotic(&self, eps: T, k_lo: i64, k_hi: i64) -> Result<KPmf<T>> {
        let s = self.scales_unchecked(eps, 0)?;
        let mut surv = Vec::new();
        let mut worst = T::zero();
        for k in (k_lo - 1)..=k_hi {
            let n = s.kappa - k;
            if n < 0 {
                surv.push(T::neg_infinity());
                continue;
            }
            let m = self.log_mu_kappa_psi(s.kappa, n, s.u1)?.exp();
            worst = worst.max(m);
            surv.push(-m);
        }
        let probs = pmf_from_log_survival(&surv);
        let mu = T::from_int(self.dist.min_support() as i64);
        let scale = (mu.powi(s.kappa as i32) * s.sigma1_sq * s.u1 * s.u1).recip();
        let entries = probs
            .into_iter()
            .enumerate()
            .map(|(i, p)| KPmfEntry {
                k: k_lo + i as i64,
                prob: p,
                reliable: true,
            })
            .collect();
        Ok(KPmf {
            eps,
            entries,
            method: Method::Asymptotic,
            abs_err: scale * (T::one() + worst.min(T::lit(1e6))),
        })
    }
}
