//! Tail probabilities of `W` and of sums of independent copies of `W`:
//! closed-form saddle asymptotics, a numerical Laplace inversion oracle,
//! and the conditional law of the first non-minimal generation.

use std::fmt;

use serde::Serialize;

use crate::real::Real;

mod asymptotic;
mod conditional;
mod inversion;

pub use asymptotic::{
    extra_offspring_constant, log_excess_normalizer, log_minimal_prefix_prob, mu1_conditional_bound,
    ExtraOffspring, Mu1Bound, SumAsymptotic, GAUSSIAN_VALIDITY_BOUND,
};
pub use conditional::{KPmf, KPmfEntry, CANCELLATION_FACTOR, INVERSION_PMF_TOLERANCE};

pub use inversion::InversionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Asymptotic,
    Inversion,
    MonteCarlo,
    ExactIdentity,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Asymptotic => "ASYMPTOTIC",
            Method::Inversion => "INVERSION",
            Method::MonteCarlo => "MONTE_CARLO",
            Method::ExactIdentity => "EXACT_IDENTITY",
        })
    }
}

/// A probability carried as its logarithm.
///
/// Invariants: `log_value <= 0`, `abs_err_log` finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogProb<T> {
    pub log_value: T,
    pub abs_err_log: T,
    pub method: Method,
}

impl<T: Real> LogProb<T> {
    /// Clamps `log_value` to `0` when it exceeds it by at most the error.
    pub fn new(log_value: T, abs_err_log: T, method: Method) -> Self {
        let log_value = if log_value > T::zero() && log_value <= abs_err_log {
            T::zero()
        } else {
            log_value
        };
        Self {
            log_value,
            abs_err_log,
            method,
        }
    }

    pub fn prob(&self) -> T {
        self.log_value.exp()
    }

    /// Estimate from `hits` successes in `trials` Bernoulli trials, with the
    /// delta-method standard error `sqrt((1 - p) / (n p))` of `log p`.
    pub fn from_counts(hits: u64, trials: u64) -> Self {
        let n = T::from_int(trials as i64);
        let p = T::from_int(hits as i64) / n;
        let se = if hits == 0 {
            T::infinity()
        } else {
            ((T::one() - p) / (n * p)).sqrt()
        };
        Self {
            log_value: p.ln(),
            abs_err_log: se,
            method: Method::MonteCarlo,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Model;
    use crate::offspring::OffspringDistribution;
    use crate::real::log_sum_exp;

    fn model() -> Model<f64> {
        Model::with_defaults(OffspringDistribution::new([(2, 0.5), (3, 0.5)]).unwrap())
    }

    #[test]
    fn log_prob_construction() {
        let lp = LogProb::new(1e-12, 1e-10, Method::Inversion);
        assert_eq!(lp.log_value, 0.0);
        let lp = LogProb::new(0.5, 1e-10, Method::Inversion);
        assert_eq!(lp.log_value, 0.5);
        let mc = LogProb::<f64>::from_counts(250, 1000);
        assert!((mc.log_value - 0.25f64.ln()).abs() < 1e-15);
        assert!((mc.abs_err_log - (0.75f64 / 250.0).sqrt()).abs() < 1e-15);
        assert!(LogProb::<f64>::from_counts(0, 10).abs_err_log.is_infinite());
        assert_eq!(Method::MonteCarlo.to_string(), "MONTE_CARLO");
    }

    #[test]
    fn inversion_satisfies_the_branching_decomposition() {
        let m = model();
        for &x in &[0.3, 0.6, 1.0, 1.5, 2.0] {
            let direct = m.tail_sum_numeric(x, 1.0, None).unwrap();
            let parts = [2.0, 3.0].map(|j| {
                0.5f64.ln() + m.tail_sum_numeric(2.5 * x, j, None).unwrap().log_value
            });
            let split = log_sum_exp(parts);
            let tol = 1e-8_f64.max(5.0 * direct.abs_err_log);
            assert!((direct.log_value - split).abs() < tol, "{x}: {} vs {split}", direct.log_value);
        }
    }

    #[test]
    fn inversion_is_monotone_and_continuous_across_the_mean() {
        let m = model();
        let xs: Vec<f64> = (0..40).map(|i| 0.2 + 0.05 * i as f64).collect();
        let vals: Vec<f64> = xs
            .iter()
            .map(|&x| m.tail_sum_numeric(x, 1.0, None).unwrap().log_value)
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] <= 0.0);
        }
        let below = m.tail_sum_numeric(1.0 - 1e-7, 1.0, None).unwrap().log_value;
        let above = m.tail_sum_numeric(1.0 + 1e-7, 1.0, None).unwrap().log_value;
        assert!((above - below).abs() < 1e-5);
    }

    #[test]
    fn explicit_plan_matches_the_automatic_contour() {
        let m = model();
        for &(x, c) in &[(0.5, 1.0), (1.25, 2.0), (3.0, 8.0)] {
            let plan = m.auto_plan(x, c).unwrap();
            let a = m.tail_sum_numeric(x, c, None).unwrap();
            let b = m.tail_sum_numeric(x, c, Some(&plan)).unwrap();
            assert!((a.log_value - b.log_value).abs() < 1e-6, "{x},{c}");
        }
        let mut bad = m.auto_plan(0.5, 1.0).unwrap();
        bad.step = -1.0;
        assert!(m.tail_sum_numeric(0.5, 1.0, Some(&bad)).is_err());
        assert!(m.tail_sum_numeric(-0.5, 1.0, None).is_err());
    }

    #[test]
    fn asymptotics_converge_to_the_inversion() {
        let m = model();
        let mut prev = f64::INFINITY;
        for &eps in &[0.2, 0.1, 0.05] {
            let asym = m.tail_w_asymptotic(eps).unwrap().log_value;
            let inv = m.tail_sum_numeric(eps, 1.0, None).unwrap().log_value;
            let gap = ((asym - inv) / inv).abs();
            assert!(gap < prev, "{eps}: {gap}");
            prev = gap;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn sum_asymptotics_agree_with_inversion() {
        let m = model();
        let s = m.compute_scales(0.05, 0).unwrap();
        let sa = m.tail_sum_asymptotic(&s, 1.0).unwrap();
        let inv = m.tail_sum_numeric(sa.x, sa.copies, None).unwrap();
        assert!(((sa.log_prob.log_value - inv.log_value) / inv.log_value).abs() < 1e-3);
        assert!(m.tail_sum_asymptotic(&s, 1.3).is_err());
    }

    #[test]
    fn exact_joint_reduces_to_the_tail_at_zero() {
        let m = model();
        let j = m.exact_joint(0.5, 0).unwrap();
        let t = m.tail_sum_numeric(0.5, 1.0, None).unwrap();
        assert_eq!(j.log_value, t.log_value);
        assert_eq!(j.method, Method::ExactIdentity);
        for k in 1..4 {
            assert!(m.exact_joint(0.5, k).unwrap().log_value < m.exact_joint(0.5, k - 1).unwrap().log_value);
        }
    }

    #[test]
    fn conditional_pmf_is_a_distribution() {
        let m = model();
        for &eps in &[0.3, 0.05, 0.01] {
            let top = m.scales_unchecked(eps, 0).unwrap().gamma_ceil + 6;
            let pmf = m.conditional_k_pmf(eps, 1, top).unwrap();
            assert!(pmf.entries.iter().all(|e| e.prob >= 0.0));
            assert!((pmf.total() - 1.0).abs() < 1e-6, "{eps}: {}", pmf.total());
        }
        let top = m.scales_unchecked(0.01, 0).unwrap().gamma_ceil + 6;
        let inv = m.conditional_k_pmf(0.01, 1, top).unwrap();
        assert_eq!(inv.method, Method::ExactIdentity);
        let asym = m.k_pmf_asymptotic(0.01, 1, top).unwrap();
        let mode = inv.entries.iter().max_by(|a, b| a.prob.total_cmp(&b.prob)).unwrap().k;
        assert!((inv.prob(mode) - asym.prob(mode)).abs() < 1e-3);
        assert!(m.conditional_k_pmf(0.1, 0, 3).is_err());
    }

    #[test]
    fn extra_offspring_constant_for_two_three() {
        let d = OffspringDistribution::<f64>::new([(2, 0.5), (3, 0.5)]).unwrap();
        assert!((extra_offspring_constant(&d).unwrap() - 1.0).abs() < 1e-14);
        let d1 = OffspringDistribution::<f64>::new([(1, 0.5), (2, 0.5)]).unwrap();
        assert!(extra_offspring_constant(&d1).is_err());
        assert!((log_minimal_prefix_prob(&d1, 3) - 3.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!((log_minimal_prefix_prob(&d, 3) - 7.0 * 0.5f64.ln()).abs() < 1e-14);
    }
}
