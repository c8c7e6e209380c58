//! The generation-level binomial sampler against an independent sampler
//! that draws every individual's offspring count separately.

use std::collections::BTreeMap;

use gwtail::sim::{fold_trees, unconditioned_k_pmf};
use gwtail::{Offspring, TreeRecord};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand::rngs::StdRng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn star() -> Offspring {
    Offspring::new([(2, 0.5), (3, 0.5)]).unwrap()
}

/// Generation sizes up to `depth`, one categorical draw per individual.
fn reference_sizes(dist: &Offspring, depth: usize, rng: &mut StdRng) -> Vec<u64> {
    let support: Vec<u32> = dist.probs().keys().copied().collect();
    let pick = WeightedIndex::new(dist.probs().values().copied()).unwrap();
    let mut sizes = vec![1u64];
    for g in 0..depth {
        let next = (0..sizes[g])
            .map(|_| support[pick.sample(rng)] as u64)
            .sum();
        sizes.push(next);
    }
    sizes
}

fn histogram(values: impl IntoIterator<Item = u64>) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

/// Pearson statistic of `counts` against `probs`, pooling cells with
/// expected count below five into their neighbour; returns the p-value.
fn chi_square_pvalue(counts: &BTreeMap<u64, u64>, probs: &BTreeMap<u64, f64>, n: u64) -> f64 {
    let mut stat = 0.0;
    let mut cells = 0;
    let (mut obs, mut exp) = (0.0, 0.0);
    for (k, &p) in probs {
        obs += *counts.get(k).unwrap_or(&0) as f64;
        exp += p * n as f64;
        if exp >= 5.0 {
            stat += (obs - exp).powi(2) / exp;
            cells += 1;
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 {
        stat += (obs - exp).powi(2) / exp.max(1e-300);
        cells += 1;
    }
    let extra: u64 = counts.iter().filter(|(k, _)| !probs.contains_key(k)).map(|(_, c)| c).sum();
    assert_eq!(extra, 0, "samples outside the support");
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

fn binomial_trees(dist: &Offspring, depth: usize, trials: u64, seed: u64) -> Vec<TreeRecord<f64>> {
    fold_trees(
        dist,
        depth,
        trials,
        seed,
        Vec::new,
        |acc: &mut Vec<TreeRecord<f64>>, r| acc.push(r.clone()),
        |mut a, b| {
            a.extend(b);
            a
        },
    )
    .unwrap()
}

/// Exact law of `Z_2` for a law on `{2, 3}`: two or three parents each
/// with two or three children.
fn exact_z2() -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for parents in [2u64, 3] {
        for threes in 0..=parents {
            let ways = if threes == 0 || threes == parents { 1.0 } else { parents as f64 };
            let p = 0.5 * ways * 0.5f64.powi(parents as i32);
            *out.entry(2 * parents + threes).or_insert(0.0) += p;
        }
    }
    out
}

#[test]
fn first_generation_matches_the_offspring_law() {
    let d = Offspring::new([(1, 0.1), (2, 0.4), (4, 0.3), (7, 0.2)]).unwrap();
    let n = 100_000;
    let trees = binomial_trees(&d, 1, n, 5);
    let counts = histogram(trees.iter().map(|t| t.gen_sizes[1]));
    let probs = d.probs().iter().map(|(&k, &p)| (k as u64, p)).collect();
    let pv = chi_square_pvalue(&counts, &probs, n);
    assert!(pv > 1e-3, "p-value {pv}");
}

#[test]
fn second_generation_matches_the_exact_law() {
    let n = 100_000;
    let trees = binomial_trees(&star(), 2, n, 6);
    let counts = histogram(trees.iter().map(|t| t.gen_sizes[2]));
    let pv = chi_square_pvalue(&counts, &exact_z2(), n);
    assert!(pv > 1e-3, "binomial sampler p-value {pv}");

    let mut rng = StdRng::seed_from_u64(6);
    let counts = histogram((0..n).map(|_| reference_sizes(&star(), 2, &mut rng)[2]));
    let pv = chi_square_pvalue(&counts, &exact_z2(), n);
    assert!(pv > 1e-3, "reference sampler p-value {pv}");
}

#[test]
fn third_generation_total_variation() {
    let n = 200_000u64;
    let trees = binomial_trees(&star(), 3, n, 7);
    let a = histogram(trees.iter().map(|t| t.gen_sizes[3]));
    let mut rng = StdRng::seed_from_u64(7);
    let b = histogram((0..n).map(|_| reference_sizes(&star(), 3, &mut rng)[3]));
    let keys: std::collections::BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
    let tv: f64 = keys
        .iter()
        .map(|k| {
            let pa = *a.get(k).unwrap_or(&0) as f64 / n as f64;
            let pb = *b.get(k).unwrap_or(&0) as f64 / n as f64;
            (pa - pb).abs()
        })
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.01, "total variation {tv}");
}

#[test]
fn first_non_minimal_generation_without_conditioning() {
    for d in [star(), Offspring::new([(1, 0.6), (3, 0.4)]).unwrap()] {
        let n = 100_000;
        let trees = binomial_trees(&d, 30, n, 8);
        let counts = histogram(trees.iter().map(|t| t.k_first.map_or(0, |k| k as u64)));
        let mut probs: BTreeMap<u64, f64> = unconditioned_k_pmf(&d, 30)
            .into_iter()
            .map(|(k, p)| (k as u64, p))
            .collect();
        let covered: f64 = probs.values().sum();
        probs.insert(0, 1.0 - covered);
        let probs = probs.into_iter().filter(|(_, p)| *p > 0.0).collect();
        let pv = chi_square_pvalue(&counts, &probs, n);
        assert!(pv > 1e-3, "p-value {pv}");
    }
}

#[test]
fn normalized_sizes_have_the_martingale_moments() {
    let d = star();
    let depth = 10;
    let n = 100_000u64;
    let trees = binomial_trees(&d, depth, n, 9);
    let w: Vec<f64> = trees.iter().map(|t| t.w_hat).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let var_exact = d.variance_w() * (1.0 - 2.5f64.powi(-(depth as i32)));
    let se = (var_exact / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean}");
    assert!((var / var_exact - 1.0).abs() < 0.03, "variance {var} vs {var_exact}");
    for g in 1..=depth {
        let m = trees.iter().map(|t| t.gen_sizes[g] as f64).sum::<f64>() / n as f64;
        assert!((m / 2.5f64.powi(g as i32) - 1.0).abs() < 0.01, "E Z_{g} = {m}");
    }
}

#[test]
fn seeded_runs_are_reproducible() {
    let a = binomial_trees(&star(), 12, 10_000, 77);
    let b = binomial_trees(&star(), 12, 10_000, 77);
    let c = binomial_trees(&star(), 12, 10_000, 78);
    assert_eq!(a, b);
    assert_ne!(a, c);
}
