//! Command-line harness: configuration, table-producing subcommands and the
//! verification suite.
//!
//! Exit codes: 0 success, 1 runtime failure or failed verification check,
//! 2 invalid configuration (nothing is written in that case).

pub mod commands;
pub mod config;
pub mod verify;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "gwtail", version, about = "Lower tails of supercritical Galton-Watson limits")]
pub struct Cli {
    /// TOML experiment configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output when neither this nor `output_path` is set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scale quantities and regime labels along the eps grid.
    ScalesTable,
    /// Asymptotic, inversion and Monte Carlo lower-tail estimates.
    TailCompare,
    /// Conditional law of the first-excess generation.
    KDistribution,
    /// Conditioned simulation at one eps (JSON plus excess-sample CSV).
    ConditionSim {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Run every acceptance criterion and invariant check.
    Verify,
}

/// The sink chosen by `--out` / `output_path`, or standard output.
fn sink(cfg: &ExperimentConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.output_path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Render everything into memory first so a failure leaves no partial file.
fn emit(cfg: &ExperimentConfig, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    let mut out = sink(cfg)?;
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool> {
    let mut overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        threads: cli.threads,
        ..Overrides::default()
    };
    if let Command::ConditionSim { eps, depth, trials } = &cli.command {
        overrides.eps = *eps;
        overrides.depth = *depth;
        overrides.trials = *trials;
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| run_command(&cli.command, &cfg))
}

/// Runs one subcommand on a resolved config; `Ok(false)` means a
/// verification check failed.
pub fn run_command(command: &Command, cfg: &ExperimentConfig) -> Result<bool> {
    match command {
        Command::ScalesTable => emit(cfg, |b| commands::scales_table(cfg, b))?,
        Command::TailCompare => emit(cfg, |b| commands::tail_compare(cfg, b))?,
        Command::KDistribution => emit(cfg, |b| commands::k_distribution(cfg, b))?,
        Command::ConditionSim { .. } => {
            let mut json = Vec::new();
            let mut excess = Vec::new();
            commands::condition_sim(cfg, &mut json, Some(&mut excess))?;
            match &cfg.output_path {
                Some(p) => {
                    std::fs::write(p, &json)?;
                    std::fs::write(commands::excess_path(p), &excess)?;
                }
                None => std::io::stdout().write_all(&json)?,
            }
        }
        Command::Verify => {
            let report = verify::run_verify(cfg)?;
            emit(cfg, |b| Ok(b.write_all(report.render().as_bytes())?))?;
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

/// Process exit code for `cli`.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn run_args(args: &[&str]) -> i32 {
        let mut full = vec!["gwtail"];
        full.extend_from_slice(args);
        run(&Cli::parse_from(full))
    }

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("exp.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    /// Data rows of a CSV output as maps from column name to cell.
    fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers().unwrap().clone();
        r.records()
            .map(|rec| {
                header
                    .iter()
                    .zip(rec.unwrap().iter())
                    .map(|(h, v)| (h.to_string(), v.to_string()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn scales_table_rows_are_periodic_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        // the second and third grid points differ by the factor mu/a = 0.8
        let cfg = write_config(dir.path(), "eps_grid = [1e-3, 1e-5, 8e-6, 1e-8]\n");
        let out = dir.path().join("scales.csv");
        let code = run_args(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "scales-table",
        ]);
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("# config: {"));
        let rows = csv_rows(&text);
        assert_eq!(rows.len(), 4);
        let f = |r: usize, c: &str| rows[r][c].parse::<f64>().unwrap();
        assert!((f(1, "H") - f(2, "H")).abs() < 1e-10);
        assert!((f(1, "y") - f(2, "y")).abs() < 1e-10);
        let kappas: Vec<i64> = rows.iter().map(|r| r["kappa"].parse().unwrap()).collect();
        assert!(kappas.windows(2).all(|w| w[1] >= w[0]));
        assert!(rows.iter().all(|r| r.contains_key("log_Phi_3")));
    }

    #[test]
    fn tail_compare_is_reproducible_and_gates_monte_carlo() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "eps_grid = [0.6, 0.3]\ntrials = 20000\ndepth = 18\n");
        let outs: Vec<String> = (0..2)
            .map(|i| {
                let out = dir.path().join(format!("tail{i}.csv"));
                let code = run_args(&[
                    "--config",
                    cfg.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--threads",
                    if i == 0 { "1" } else { "3" },
                    "tail-compare",
                ]);
                assert_eq!(code, 0);
                std::fs::read_to_string(out).unwrap()
            })
            .collect();
        // the thread count is part of the embedded config, so compare the data only
        let data = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert_eq!(data(&outs[0]), data(&outs[1]));
        let rows = csv_rows(&outs[0]);
        assert!(!rows[0]["log_mc"].is_empty());
        assert!(rows[1]["log_mc"].is_empty());
    }

    #[test]
    fn k_distribution_flags_the_predicted_pair() {
        let cfg = ExperimentConfig {
            eps_grid: vec![1e-4],
            ..ExperimentConfig::default()
        };
        let mut buf = Vec::new();
        commands::k_distribution(&cfg, &mut buf).unwrap();
        let rows = csv_rows(std::str::from_utf8(&buf).unwrap());
        assert_eq!(rows.len(), 5);
        let predicted: f64 = rows
            .iter()
            .filter(|r| r["predicted"] == "true")
            .map(|r| r["pmf"].parse::<f64>().unwrap())
            .sum();
        assert!(predicted >= 0.9);
    }

    #[test]
    fn k_distribution_on_the_default_grid() {
        let cfg = ExperimentConfig::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        commands::k_distribution(&cfg, &mut a).unwrap();
        commands::k_distribution(&cfg, &mut b).unwrap();
        assert_eq!(a, b);
        let rows = csv_rows(std::str::from_utf8(&a).unwrap());
        for &eps in &cfg.eps_grid {
            let block: Vec<_> = rows
                .iter()
                .filter(|r| r["eps"].parse::<f64>().unwrap() == eps)
                .collect();
            let pmf = |r: &std::collections::HashMap<String, String>| r["pmf"].parse::<f64>().unwrap();
            let total: f64 = block.iter().map(|r| pmf(r)).sum();
            assert!((total - 1.0).abs() <= 1e-3, "eps {eps}: total {total}");
            if block[0]["regime"] == "OMEGA_LARGE" {
                let pair: Vec<f64> = block.iter().filter(|r| r["predicted"] == "true").map(|r| pmf(r)).collect();
                assert!(pair[0] > pair[1]);
            }
        }
        let last = rows.last().unwrap();
        assert!(last["mass_predicted"].parse::<f64>().unwrap() >= 0.9);
    }

    #[test]
    fn scales_table_gamma_matches_a_hand_recomputation() {
        let cfg = ExperimentConfig {
            eps_grid: vec![1e-6],
            ..ExperimentConfig::default()
        };
        let mut buf = Vec::new();
        commands::scales_table(&cfg, &mut buf).unwrap();
        let row = &csv_rows(std::str::from_utf8(&buf).unwrap())[0];
        let f = |c: &str| row[c].parse::<f64>().unwrap();
        let l = 1e6f64.ln();
        let gamma = l / 1.25f64.ln() - l.ln() / 2f64.ln() + f("H");
        assert!((gamma - f("gamma")).abs() < 1e-9);
        assert_eq!(f("kappa"), (l / 1.25f64.ln()).floor());
    }

    #[test]
    fn condition_sim_writes_json_and_excess_samples() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run.json");
        let code = run_args(&[
            "--out",
            out.to_str().unwrap(),
            "condition-sim",
            "--eps",
            "0.7",
            "--depth",
            "15",
            "--trials",
            "5000",
        ]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["config"]["condition_eps"], 0.7);
        let accepted = v["experiment"]["accepted"].as_u64().unwrap();
        assert!(accepted > 0);
        let excess = std::fs::read_to_string(commands::excess_path(&out)).unwrap();
        assert!(excess.starts_with("# config: "));
        assert!(excess.lines().count() > 2);
    }

    #[test]
    fn invalid_configuration_exits_with_code_two_and_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("never.csv");
        for text in ["offspring = { 2 = 0.7 }\n", "eps_grid = [0.1, 0.5]\n", "colour = 1\n"] {
            let cfg = write_config(dir.path(), text);
            let code = run_args(&[
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "scales-table",
            ]);
            assert_eq!(code, 2, "{text}");
            assert!(!out.exists());
        }
        let code = run_args(&["--config", "/nonexistent/exp.toml", "verify"]);
        assert_eq!(code, 2);
        // eps too large for n >= 1 is a configuration problem as well
        let cfg = write_config(dir.path(), "eps_grid = [0.9]\n");
        let code = run_args(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "scales-table"]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }

    #[test]
    fn reduced_budget_verify_renders_every_check() {
        let cfg = ExperimentConfig::from_toml(
            "[verify]\ntrials = 20000\ndepth = 16\nmu1_trials = 20000\nmu1_depth = 16\nscan_points = 20\n",
        )
        .unwrap();
        let report = verify::run_verify(&cfg).unwrap();
        let text = report.render();
        assert!(text.starts_with("# config: "));
        for n in 1..=13 {
            assert!(report.criterion(n).next().is_some(), "criterion {n} missing");
        }
        assert!(report.criterion(1).all(|c| c.passed));
        assert!(report.criterion(9).all(|c| c.passed));
        assert!(text.lines().last().unwrap().starts_with("SUMMARY"));
        assert!(text
            .lines()
            .skip(1)
            .take(report.checks.len())
            .all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
    }
}
