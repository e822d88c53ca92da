//! `price`: batch front door for the pricing engine.
//!
//! Reads a JSON scenario, runs the requested pricer over the deal grid, and
//! emits a JSON report (stdout by default, `--out` for a file) plus an
//! optional `--csv` table. Exit codes: 0 on success, 2 on a validation
//! problem (unreadable file, malformed or unknown-key JSON, invalid model),
//! 3 on a numerical failure (infeasible capital budget, optimizer
//! non-convergence). Diagnostics go to stderr; nothing is written on failure.

mod report;
mod scenario;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use kva_core::{linear, median, montecarlo, oracle, shareholder, Deal, KvaError};

use report::{Decomposition, Metadata, OracleBlock, QResult, RarocBlock, Report, ShareholderBlock};
use scenario::{Mode, Overrides, Resolved, Scenario};

#[derive(Parser)]
#[command(name = "price", version, about = "Capital-constrained indifference pricing")]
struct Cli {
    /// Scenario JSON file.
    scenario: PathBuf,

    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also write a CSV table, one row per deal size.
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Override the scenario's engine mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,

    /// Override the scenario's Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the scenario's Monte Carlo path count.
    #[arg(long)]
    paths: Option<usize>,

    /// Zero wall-clock metadata so identical runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

enum Failure {
    Validation(String),
    Numeric(String),
}

impl Failure {
    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) => m,
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<KvaError> for Failure {
    fn from(e: KvaError) -> Self {
        use KvaError::*;
        match e {
            NotPositiveDefinite(_)
            | InconsistentCovariance { .. }
            | BadAccrual { .. }
            | DimensionMismatch { .. }
            | NonFinite(_)
            | InvalidParameter(_) => Failure::Validation(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let stamp_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);

    let raw = fs::read_to_string(&cli.scenario)
        .map_err(|e| Failure::Validation(format!("{}: {e}", cli.scenario.display())))?;
    let parsed: Scenario =
        serde_json::from_str(&raw).map_err(|e| Failure::Validation(format!("scenario: {e}")))?;
    let over = Overrides { mode: cli.mode, seed: cli.seed, paths: cli.paths };
    let rs = parsed.resolve(&over)?;

    let raroc = linear::raroc_report(&rs.model, &rs.constraint);
    let (results, shareholder, oracle_comparison) = match rs.engine.mode {
        Mode::Linear => (linear_rows(&rs)?, None, None),
        Mode::Median => (median_rows(&rs)?, None, None),
        Mode::Simple => (simple_rows(&rs, &raroc)?, None, None),
        Mode::Shareholder => {
            let (rows, block) = shareholder_rows(&rs)?;
            (rows, Some(block), None)
        }
        Mode::Compare => {
            let (rows, block) = compare_rows(&rs)?;
            (rows, None, Some(block))
        }
    };

    let metadata = Metadata {
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix_ms: if cli.deterministic { 0 } else { stamp_ms },
        duration_ms: if cli.deterministic { 0 } else { started.elapsed().as_millis() as u64 },
    };
    let report = Report {
        mode: rs.engine.mode,
        scenario: rs.echo,
        raroc: RarocBlock {
            raroc0: raroc.raroc0,
            hurdle: raroc.hurdle,
            expected_pnl: raroc.expected_pnl,
        },
        results,
        shareholder,
        oracle_comparison,
        metadata,
    };

    let json = report.to_json();
    match &cli.out {
        Some(path) => fs::write(path, json)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?,
        None => print!("{json}"),
    }
    if let Some(path) = &cli.csv {
        fs::write(path, report.to_csv())
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn linear_rows(rs: &Resolved) -> Result<Vec<QResult>, Failure> {
    let chi0 = linear::multiplier(&rs.model, &rs.constraint, 0.0)?;
    rs.echo
        .deal
        .q_grid
        .iter()
        .map(|&q| {
            let sol = linear::price_exact(&rs.model, &rs.constraint, Deal::new(q)?)?;
            Ok(QResult {
                q,
                price: sol.price_exact,
                decomposition: Decomposition {
                    expectation: sol.decomposition.expectation,
                    capital: sol.decomposition.capital,
                    hedge: sol.decomposition.hedge,
                },
                chi0: Some(chi0),
                chi_q: Some(sol.chi_q),
                theta_star: Some(sol.theta_star.iter().copied().collect()),
                price_stderr: None,
                survival_prob: None,
                survival_stderr: None,
                solvency_ok: None,
                oracle_price: None,
            })
        })
        .collect()
}

fn median_rows(rs: &Resolved) -> Result<Vec<QResult>, Failure> {
    let chi0 = linear::multiplier(&rs.model, &rs.constraint, 0.0)?;
    rs.echo
        .deal
        .q_grid
        .iter()
        .map(|&q| {
            let med = median::median_price(&rs.model, &rs.constraint, Deal::new(q)?)?;
            let sol = med.delegate;
            Ok(QResult {
                q,
                price: med.price,
                decomposition: Decomposition {
                    expectation: sol.decomposition.expectation,
                    capital: sol.decomposition.capital,
                    hedge: sol.decomposition.hedge,
                },
                chi0: Some(chi0),
                chi_q: Some(sol.chi_q),
                theta_star: Some(sol.theta_star.iter().copied().collect()),
                price_stderr: None,
                survival_prob: None,
                survival_stderr: None,
                solvency_ok: Some(med.solvency_ok),
                oracle_price: None,
            })
        })
        .collect()
}

fn simple_rows(rs: &Resolved, raroc: &linear::RarocReport) -> Result<Vec<QResult>, Failure> {
    let m = &rs.echo.model;
    let radius = rs.constraint.radius();
    rs.echo
        .deal
        .q_grid
        .iter()
        .map(|&q| {
            let price = linear::simple_model_price(
                raroc.expected_pnl,
                radius * radius,
                raroc.raroc0,
                m.sigma_y2,
                m.m_y,
                rs.constraint.nu,
                q,
                m.r,
                m.lambda,
            )?;
            let expectation = -q * m.m_y;
            Ok(QResult {
                q,
                price,
                decomposition: Decomposition {
                    expectation,
                    capital: price * rs.model.accrual() - expectation,
                    hedge: 0.0,
                },
                chi0: None,
                chi_q: None,
                theta_star: None,
                price_stderr: None,
                survival_prob: None,
                survival_stderr: None,
                solvency_ok: None,
                oracle_price: None,
            })
        })
        .collect()
}

fn shareholder_rows(rs: &Resolved) -> Result<(Vec<QResult>, ShareholderBlock), Failure> {
    let batch =
        montecarlo::sample(&rs.model, rs.engine.n_paths, rs.engine.seed, rs.engine.antithetic)?;
    let sol = shareholder::marginal_price(
        &rs.model,
        &rs.constraint,
        Deal::new(0.0)?,
        &batch,
        &rs.engine.h_grid,
    )?;
    let (a1, a2) = sol.price_coeffs;
    let (se1, se2) = sol.coeff_stderr;
    let theta: Vec<f64> = sol.theta_star.iter().copied().collect();

    let rows = rs
        .echo
        .deal
        .q_grid
        .iter()
        .map(|&q| {
            let price = a1 * q + a2 * q * q;
            let expectation = -q * rs.echo.model.m_y;
            let hedge = q * rs.model.b_a_inv_mu();
            QResult {
                q,
                price,
                decomposition: Decomposition {
                    expectation,
                    // Remainder after the first-order book terms: the
                    // estimated capital charge including default effects.
                    capital: price * rs.model.accrual() - expectation - hedge,
                    hedge,
                },
                chi0: Some(sol.chi0),
                chi_q: None,
                theta_star: Some(theta.clone()),
                price_stderr: Some(se1 * q.abs() + se2 * q * q),
                survival_prob: Some(sol.survival.value),
                survival_stderr: Some(sol.survival.stderr),
                solvency_ok: None,
                oracle_price: None,
            }
        })
        .collect();

    let block = ShareholderBlock {
        a1,
        a2,
        a1_stderr: se1,
        a2_stderr: se2,
        chi0: sol.chi0,
        chi0_prime: sol.chi0_prime,
        theta_prime: sol.theta_prime.iter().copied().collect(),
        psi0: sol.psi0.value,
        psi0_stderr: sol.psi0.stderr,
        curvature: sol.curvature,
        value0: sol.value.value,
        value0_stderr: sol.value.stderr,
    };
    Ok((rows, block))
}

fn compare_rows(rs: &Resolved) -> Result<(Vec<QResult>, OracleBlock), Failure> {
    let mut config = oracle::OracleConfig::for_model(&rs.model);
    config.bisect_tol = rs.engine.bisect_tol;
    let mut rows = linear_rows(rs)?;
    let mut max_abs_price_diff: f64 = 0.0;
    for row in &mut rows {
        let root = oracle::indifference_root(
            |q, p| linear::linear_value(&rs.model, &rs.constraint, q, p),
            row.q,
            &config,
        )?;
        max_abs_price_diff = max_abs_price_diff.max((root - row.price).abs());
        row.oracle_price = Some(root);
    }
    Ok((rows, OracleBlock { max_abs_price_diff }))
}
