//! Generation-size simulation of the process, rejection conditioning on
//! `W_hat < eps`, and the exact unconditioned law of `K`.
//!
//! A generation of `Z` individuals is advanced by splitting `Z` over the
//! offspring support with a chain of binomial draws, which is equal in law
//! to drawing every individual separately but costs `O(support)` per
//! generation regardless of `Z`.
//!
//! Trials are grouped into fixed-size chunks. Chunk `i` draws from a
//! ChaCha8 stream selected by `(seed, i)`, and chunk results are merged in
//! index order, so results do not depend on the number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::Model;
use crate::error::{GwError, Result};
use crate::offspring::OffspringDistribution;
use crate::real::Real;
use crate::scales::mu1_scales;
use crate::tail::{log_excess_normalizer, LogProb};

pub const CHUNK_TRIALS: u64 = 4096;
/// Expected acceptances below which a conditional run is warned about.
pub const MIN_EXPECTED_ACCEPTANCES: f64 = 100.0;

/// One simulated tree, summarized by generation sizes.
///
/// Invariants: `gen_sizes[0] = 1`, `gen_sizes[k+1] >= mu gen_sizes[k]`, and
/// when `k_first` is present, `gen_sizes[K] = mu^K + m_excess`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeRecord<T> {
    pub gen_sizes: Vec<u64>,
    /// First `k` with `Z_k > mu^k`, if it occurs within the depth.
    pub k_first: Option<u32>,
    /// Number of generation-`(K-1)` individuals with exactly `j > mu` children.
    pub m: BTreeMap<u32, u64>,
    pub m_total: u64,
    pub m_excess: u64,
    pub w_hat: T,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WEstimate<T> {
    pub w_hat: T,
    /// Conditional standard deviation of `W` given `Z_depth`.
    pub se: T,
}

/// Outcome of rejection sampling on `W_hat < eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalExperiment<T> {
    pub eps: T,
    pub depth: usize,
    pub trials: u64,
    pub accepted: u64,
    /// Accepted trees by `K`; trees without a non-minimal generation within
    /// the depth are counted in `k_absent`.
    pub k_histogram: BTreeMap<u32, u64>,
    pub k_absent: u64,
    /// `(Z_K - mu^K) / (mu^K eps^(alpha mu^(gamma - K)))` for accepted trees.
    pub excess_samples: Vec<T>,
    pub acceptance_logprob: LogProb<T>,
    pub gamma: Option<T>,
    pub preflight: Option<LogProb<T>>,
    pub seed: u64,
}

impl<T: Real> ConditionalExperiment<T> {
    /// Accepted trees with `K > k` (absent `K` included).
    pub fn count_k_above(&self, k: u32) -> u64 {
        self.k_absent + self.k_histogram.range(k + 1..).map(|(_, c)| c).sum::<u64>()
    }

    pub fn median_excess(&self) -> Option<T> {
        median(&self.excess_samples)
    }
}

pub fn median<T: Real>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::lit(0.5)
    })
}

/// Precomputed binomial chain for one offspring law.
#[derive(Debug, Clone)]
pub struct GenerationSampler {
    support: Vec<u32>,
    /// `p_i / (1 - sum_{l<i} p_l)`; the last entry takes the remainder.
    conditional: Vec<f64>,
    min_support: u32,
    mean: f64,
}

impl GenerationSampler {
    pub fn new<T: Real>(dist: &OffspringDistribution<T>) -> Self {
        let support: Vec<u32> = dist.probs().keys().copied().collect();
        let probs: Vec<f64> = dist.probs().values().map(|p| p.as_f64()).collect();
        let mut left = 1.0;
        let mut conditional = Vec::with_capacity(probs.len());
        for &p in &probs {
            conditional.push(if left > 0.0 { (p / left).clamp(0.0, 1.0) } else { 1.0 });
            left -= p;
        }
        Self {
            support,
            conditional,
            min_support: dist.min_support(),
            mean: dist.mean().as_f64(),
        }
    }

    /// Split `z` individuals by their number of children.
    pub fn split<R: Rng + ?Sized>(&self, z: u64, rng: &mut R, out: &mut [u64]) {
        let mut left = z;
        let last = self.support.len() - 1;
        for (i, slot) in out.iter_mut().enumerate() {
            let c = if i == last || left == 0 {
                left
            } else {
                let p = self.conditional[i];
                if p >= 1.0 {
                    left
                } else {
                    Binomial::new(left, p).expect("valid binomial").sample(rng)
                }
            };
            *slot = c;
            left -= c;
        }
    }

    /// Simulate one tree to `depth` generations.
    pub fn sample_tree<T: Real, R: Rng + ?Sized>(
        &self,
        depth: usize,
        rng: &mut R,
    ) -> Result<TreeRecord<T>> {
        Ok(self
            .sample_tree_below(depth, None, rng)?
            .expect("no cutoff, so the tree is complete"))
    }

    /// Like [`Self::sample_tree`], but abandons the tree (returning `None`)
    /// as soon as `Z_g mu^(depth-g)`, a lower bound for `Z_depth`, shows
    /// that `W_hat >= cutoff`. Kept trees are exactly those with
    /// `W_hat < cutoff`; abandoned ones consume fewer random draws.
    pub fn sample_tree_below<T: Real, R: Rng + ?Sized>(
        &self,
        depth: usize,
        cutoff: Option<T>,
        rng: &mut R,
    ) -> Result<Option<TreeRecord<T>>> {
        if depth == 0 {
            return Err(GwError::DomainError("depth must be at least 1".into()));
        }
        let a_d = self.mean.powi(depth as i32);
        let mut sizes = Vec::with_capacity(depth + 1);
        sizes.push(1u64);
        let mut counts = vec![0u64; self.support.len()];
        let mut k_first = None;
        let mut m = BTreeMap::new();
        let (mut m_total, mut m_excess) = (0u64, 0u64);
        for g in 0..depth {
            let z = sizes[g];
            self.split(z, rng, &mut counts);
            let mut next = 0u64;
            let mut overflow = false;
            for (&j, &c) in self.support.iter().zip(&counts) {
                match (j as u64).checked_mul(c).and_then(|v| next.checked_add(v)) {
                    Some(v) => next = v,
                    None => overflow = true,
                }
            }
            if let Some(eps) = cutoff {
                let lower = (self.min_support as u64)
                    .checked_pow((depth - g - 1) as u32)
                    .and_then(|p| p.checked_mul(next));
                match lower {
                    None => return Ok(None),
                    Some(l) if overflow || T::lit(l as f64 / a_d) >= eps => return Ok(None),
                    _ => {}
                }
            }
            if overflow {
                return Err(GwError::DepthOverflow { generation: g + 1 });
            }
            if k_first.is_none() {
                for (&j, &c) in self.support.iter().zip(&counts) {
                    if j > self.min_support && c > 0 {
                        m.insert(j, c);
                        m_total += c;
                        m_excess += (j - self.min_support) as u64 * c;
                    }
                }
                if m_total > 0 {
                    k_first = Some(g as u32 + 1);
                }
            }
            sizes.push(next);
        }
        let w_hat = T::lit(sizes[depth] as f64 / a_d);
        Ok(Some(TreeRecord {
            gen_sizes: sizes,
            k_first,
            m,
            m_total,
            m_excess,
            w_hat,
            depth,
        }))
    }
}

/// Simulate one tree with a fresh sampler.
pub fn sample_tree<T: Real, R: Rng + ?Sized>(
    dist: &OffspringDistribution<T>,
    depth: usize,
    rng: &mut R,
) -> Result<TreeRecord<T>> {
    GenerationSampler::new(dist).sample_tree(depth, rng)
}

pub fn estimate_w<T: Real>(dist: &OffspringDistribution<T>, record: &TreeRecord<T>) -> WEstimate<T> {
    let a_d = dist.mean().powi(record.depth as i32);
    let z = T::lit(record.gen_sizes[record.depth] as f64);
    WEstimate {
        w_hat: record.w_hat,
        se: (z * dist.variance_w()).sqrt() / a_d,
    }
}

/// The random stream used for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Deterministic parallel fold over `trials` simulated trees.
///
/// `fold` sees every tree of a chunk in order; chunk accumulators are
/// merged left to right, so the result is independent of scheduling.
pub fn fold_trees<T, A, I, F, M>(
    dist: &OffspringDistribution<T>,
    depth: usize,
    trials: u64,
    seed: u64,
    init: I,
    fold: F,
    merge: M,
) -> Result<A>
where
    T: Real,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &TreeRecord<T>) + Sync,
    M: Fn(A, A) -> A,
{
    fold_trees_below(dist, depth, trials, seed, None, init, fold, merge)
}

/// [`fold_trees`] restricted to trees with `W_hat < cutoff`; the others are
/// abandoned early and never reach `fold`.
#[allow(clippy::too_many_arguments)]
pub fn fold_trees_below<T, A, I, F, M>(
    dist: &OffspringDistribution<T>,
    depth: usize,
    trials: u64,
    seed: u64,
    cutoff: Option<T>,
    init: I,
    fold: F,
    merge: M,
) -> Result<A>
where
    T: Real,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &TreeRecord<T>) + Sync,
    M: Fn(A, A) -> A,
{
    let sampler = GenerationSampler::new(dist);
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let parts: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut acc = init();
            let n = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            for _ in 0..n {
                if let Some(rec) = sampler.sample_tree_below(depth, cutoff, &mut rng)? {
                    fold(&mut acc, &rec);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut out = init();
    for p in parts {
        out = merge(out, p?);
    }
    Ok(out)
}

#[derive(Default)]
struct ChunkStats<T> {
    accepted: u64,
    hist: BTreeMap<u32, u64>,
    absent: u64,
    excess: Vec<T>,
}

impl<T: Real> Model<T> {
    /// `log P(W < eps)` for the pre-flight budget check: inversion, or the
    /// saddle asymptotics when the inversion is out of reach.
    pub fn preflight_estimate(&self, eps: T) -> Option<LogProb<T>> {
        self.tail_sum_numeric(eps, T::one(), None)
            .ok()
            .or_else(|| self.tail_w_asymptotic(eps).ok())
    }

    /// Rejection sampling of trees with `W_hat < eps`.
    pub fn run_conditional(
        &self,
        eps: T,
        depth: usize,
        trials: u64,
        seed: u64,
    ) -> Result<ConditionalExperiment<T>> {
        if !(eps > T::zero()) {
            return Err(GwError::DomainError(format!("eps = {eps} must be positive")));
        }
        if trials == 0 {
            return Err(GwError::DomainError("trials must be positive".into()));
        }
        let dist = &self.dist;
        let preflight = self.preflight_estimate(eps);
        if let Some(pf) = preflight {
            let expected = trials as f64 * pf.log_value.as_f64().exp();
            if expected < MIN_EXPECTED_ACCEPTANCES {
                log::warn!(
                    "eps = {eps}: about {expected:.3e} expected acceptances in {trials} trials"
                );
            }
        }
        let gamma = if eps >= T::one() {
            None
        } else if dist.min_support() == 1 {
            mu1_scales(dist, eps).ok().map(|s| s.gamma)
        } else {
            self.scales_unchecked(eps, 0).ok().map(|s| s.gamma)
        };
        let with_excess = dist.min_support() >= 2 && !dist.is_degenerate() && gamma.is_some();
        let stats = fold_trees_below(
            dist,
            depth,
            trials,
            seed,
            Some(eps),
            ChunkStats::<T>::default,
            |acc, rec| {
                if rec.w_hat >= eps {
                    return;
                }
                acc.accepted += 1;
                match rec.k_first {
                    Some(k) => {
                        *acc.hist.entry(k).or_insert(0) += 1;
                        if with_excess {
                            let g = gamma.expect("checked");
                            if let Ok(l) = log_excess_normalizer(dist, eps, g, k as i64) {
                                acc.excess.push(T::lit(rec.m_excess as f64) / l.exp());
                            }
                        }
                    }
                    None => acc.absent += 1,
                }
            },
            |mut a, b| {
                a.accepted += b.accepted;
                a.absent += b.absent;
                for (k, c) in b.hist {
                    *a.hist.entry(k).or_insert(0) += c;
                }
                a.excess.extend(b.excess);
                a
            },
        )?;
        if stats.accepted == 0 {
            return Err(GwError::BudgetExhausted { trials });
        }
        Ok(ConditionalExperiment {
            eps,
            depth,
            trials,
            accepted: stats.accepted,
            k_histogram: stats.hist,
            k_absent: stats.absent,
            excess_samples: stats.excess,
            acceptance_logprob: LogProb::from_counts(stats.accepted, trials),
            gamma,
            preflight,
            seed,
        })
    }
}

/// Exact law of `K` without conditioning: `P(K > k) = p_mu^((mu^k-1)/(mu-1))`
/// (`p_1^k` when `mu = 1`). Entries `1..=k_max`.
pub fn unconditioned_k_pmf<T: Real>(dist: &OffspringDistribution<T>, k_max: u32) -> BTreeMap<u32, T> {
    let surv = |k: u32| crate::tail::log_minimal_prefix_prob(dist, k as i64).exp();
    (1..=k_max)
        .map(|k| (k, (surv(k - 1) - surv(k)).max(T::zero())))
        .collect()
}
