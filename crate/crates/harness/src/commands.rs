//! The table-producing subcommands. Each writes the config header line and
//! then CSV (or JSON) to the given writer; nothing is written before all
//! rows have been computed.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gwtail::scales::mu1_scales;
use gwtail::sim::MIN_EXPECTED_ACCEPTANCES;
use gwtail::{ConditionalExperiment, GwError, GwModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};

/// Real-valued CSV cell: shortest round-trip scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write_csv<W: Write>(
    cfg: &ExperimentConfig,
    mut out: W,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    writeln!(out, "{}", cfg.header_line())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per grid point with every scale quantity and the regime label.
pub fn scales_table<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    let model = cfg.model()?;
    if model.dist.min_support() < 2 || model.dist.is_degenerate() {
        return Err(ConfigError("scales-table needs minimal offspring >= 2 and p_mu < 1".into()).into());
    }
    let scales: Vec<_> = cfg
        .eps_grid
        .par_iter()
        .map(|&eps| model.compute_scales(eps, cfg.d))
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            e @ GwError::EpsilonTooLarge { .. } => anyhow::Error::new(ConfigError(e.to_string())),
            e => e.into(),
        })?;
    let extra: Vec<u32> = model
        .dist
        .probs()
        .keys()
        .copied()
        .filter(|&j| j > model.dist.min_support())
        .collect();
    let mut header: Vec<String> = [
        "eps", "kappa", "y", "gamma", "frac_gamma", "H", "omega", "n", "N", "regime", "d",
        "gamma_ceil", "log_omega", "u1", "sigma1_sq", "b_phi_u1",
    ]
    .map(String::from)
    .to_vec();
    header.extend(extra.iter().map(|j| format!("log_Phi_{j}")));
    let rows: Vec<Vec<String>> = scales
        .iter()
        .map(|s| {
            let mut r = vec![
                num(s.eps),
                s.kappa.to_string(),
                num(s.y),
                num(s.gamma),
                num(s.frac_gamma),
                num(s.h),
                num(s.omega),
                s.n.to_string(),
                num(s.big_n),
                s.regime().to_string(),
                s.d.to_string(),
                s.gamma_ceil.to_string(),
                num(s.log_omega),
                num(s.u1),
                num(s.sigma1_sq),
                num(s.b_phi_u1),
            ];
            r.extend(extra.iter().map(|j| num(s.log_phi_terms[j])));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(cfg, out, &header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub eps: f64,
    pub log_asym: Option<f64>,
    pub log_inv: Option<f64>,
    pub log_mc: Option<f64>,
    pub se_mc: Option<f64>,
    pub err_asym: Option<f64>,
    pub err_inv: Option<f64>,
    /// `|log_asym - log_inv| / |log_inv|`.
    pub rel_gap: Option<f64>,
    pub expected_acceptances: Option<f64>,
}

/// Asymptotic, inversion and (where the budget allows) Monte Carlo
/// estimates of `log P(W < eps)` along the grid.
pub fn tail_rows(cfg: &ExperimentConfig, model: &GwModel) -> Result<Vec<TailRow>> {
    let analytic: Vec<_> = cfg
        .eps_grid
        .par_iter()
        .map(|&eps| {
            let asym = model.tail_w_asymptotic(eps);
            let inv = model.tail_sum_numeric(eps, 1.0, None);
            if let Err(e) = &asym {
                log::info!("eps = {eps}: no asymptotic value ({e})");
            }
            if let Err(e) = &inv {
                log::warn!("eps = {eps}: inversion failed ({e})");
            }
            (eps, asym.ok(), inv.ok())
        })
        .collect();
    let mut rows = Vec::with_capacity(analytic.len());
    for (eps, asym, inv) in analytic {
        let pre = inv.or(asym);
        let expected = pre.map(|p| cfg.trials as f64 * p.log_value.exp());
        let mc = match expected {
            Some(x) if x >= MIN_EXPECTED_ACCEPTANCES => {
                Some(model.run_conditional(eps, cfg.depth, cfg.trials, cfg.seed)?)
            }
            _ => None,
        };
        let rel_gap = match (asym, inv) {
            (Some(a), Some(i)) => Some(((a.log_value - i.log_value) / i.log_value).abs()),
            _ => None,
        };
        rows.push(TailRow {
            eps,
            log_asym: asym.map(|a| a.log_value),
            log_inv: inv.map(|i| i.log_value),
            log_mc: mc.as_ref().map(|m| m.acceptance_logprob.log_value),
            se_mc: mc.as_ref().map(|m| m.acceptance_logprob.abs_err_log),
            err_asym: asym.map(|a| a.abs_err_log),
            err_inv: inv.map(|i| i.abs_err_log),
            rel_gap,
            expected_acceptances: expected,
        });
    }
    Ok(rows)
}

pub fn tail_compare<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    let model = cfg.model()?;
    let rows: Vec<Vec<String>> = tail_rows(cfg, &model)?
        .iter()
        .map(|r| {
            vec![
                num(r.eps),
                opt(r.log_asym),
                opt(r.log_inv),
                opt(r.log_mc),
                opt(r.se_mc),
                opt(r.err_asym),
                opt(r.err_inv),
                opt(r.rel_gap),
                opt(r.expected_acceptances),
            ]
        })
        .collect();
    write_csv(
        cfg,
        out,
        &[
            "eps", "log_asym", "log_inv", "log_mc", "se_mc", "err_asym", "err_inv", "rel_gap",
            "expected_acceptances",
        ],
        &rows,
    )
}

/// `gamma` for either growth type: the Schröder-case scale when the
/// minimal offspring is at least two, `log(1/eps)/log a` otherwise.
pub fn gamma_of(model: &GwModel, eps: f64) -> Result<f64> {
    if model.dist.min_support() == 1 {
        Ok(mu1_scales(&model.dist, eps)?.gamma)
    } else {
        Ok(model.scales_unchecked(eps, 0)?.gamma)
    }
}

/// Conditional law of `K` on `ceil(gamma) - 2 ..= ceil(gamma) + 2`.
pub fn k_distribution<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    let model = cfg.model()?;
    let blocks: Vec<Vec<Vec<String>>> = cfg
        .eps_grid
        .par_iter()
        .map(|&eps| -> Result<Vec<Vec<String>>> {
            let gamma = gamma_of(&model, eps)?;
            let (ceil, _) = gwtail::scales::ceil_with_tie(gamma);
            let regime = if model.dist.min_support() >= 2 {
                model.scales_unchecked(eps, 0)?.regime().to_string()
            } else {
                "NA".to_string()
            };
            let lo = (ceil - 2).max(1);
            let pmf = model
                .conditional_k_pmf(eps, lo, ceil + 2)
                .with_context(|| format!("conditional law of K at eps = {eps}"))?;
            let mass = pmf.prob(ceil) + pmf.prob(ceil + 1);
            Ok(pmf
                .entries
                .iter()
                .map(|e| {
                    vec![
                        num(eps),
                        e.k.to_string(),
                        num(e.prob),
                        if e.reliable { "OK" } else { "UNRELIABLE" }.to_string(),
                        (e.k == ceil || e.k == ceil + 1).to_string(),
                        regime.clone(),
                        num(gamma),
                        num(mass),
                        pmf.method.to_string(),
                    ]
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = blocks.into_iter().flatten().collect();
    write_csv(
        cfg,
        out,
        &["eps", "k", "pmf", "flag", "predicted", "regime", "gamma", "mass_predicted", "method"],
        &rows,
    )
}

#[derive(Serialize)]
struct ConditionSimRecord<'a> {
    config: &'a ExperimentConfig,
    experiment: &'a ConditionalExperiment<f64>,
}

/// Path of the excess-sample CSV that accompanies the JSON at `json`.
pub fn excess_path(json: &Path) -> PathBuf {
    json.with_extension("excess.csv")
}

pub fn run_condition_sim(cfg: &ExperimentConfig) -> Result<ConditionalExperiment<f64>> {
    let model = cfg.model()?;
    let eps = cfg.condition_eps.unwrap_or(cfg.eps_grid[0]);
    Ok(model.run_conditional(eps, cfg.depth, cfg.trials, cfg.seed)?)
}

/// JSON record of the experiment (config included) and the CSV of the
/// normalized excess samples.
pub fn condition_sim<J: Write, C: Write>(
    cfg: &ExperimentConfig,
    mut json: J,
    excess: Option<C>,
) -> Result<()> {
    let exp = run_condition_sim(cfg)?;
    serde_json::to_writer_pretty(
        &mut json,
        &ConditionSimRecord {
            config: cfg,
            experiment: &exp,
        },
    )?;
    writeln!(json)?;
    if let Some(c) = excess {
        let rows: Vec<Vec<String>> = exp
            .excess_samples
            .iter()
            .enumerate()
            .map(|(i, x)| vec![i.to_string(), num(*x)])
            .collect();
        write_csv(cfg, c, &["index", "excess"], &rows)?;
    }
    Ok(())
}
