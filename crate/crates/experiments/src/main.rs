use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rsma_experiments::output::{self, RESULTS_CSV, RESULTS_JSON, SOLUTION_JSON, TRACE_CSV, TRACE_HEADER};
use rsma_experiments::runner::{self, DeRow, OrderRow, ResultRow};
use rsma_experiments::{ExperimentConfig, OrderingChoice, Result};

#[derive(Parser)]
#[command(name = "rsma", version, about = "Energy-efficient uplink RSMA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Decoding-order method.
    #[arg(long, global = true, value_enum)]
    method: Option<OrderingChoice>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once at the base system and write the solution.
    Optimize,
    /// Run the configured schemes over the sweep.
    Sweep,
    /// Compare DE and Monte-Carlo energy efficiency over the sweep.
    ValidateDe,
    /// Compare exhaustive, greedy, reversed and random decoding orders.
    CompareOrders,
    /// Run every multiple-access and backoff scheme over the sweep.
    CompareSchemes,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    if let Some(method) = cli.method {
        config.ordering = method;
    }
    config.validate()?;
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn run(cli: &Cli) -> Result<bool> {
    let config = load(cli)?;
    let out = &config.out_dir;
    let started = Instant::now();
    let ok = match cli.command {
        Command::Optimize => {
            let res = runner::optimize(&config)?;
            output::write_json(&out.join(SOLUTION_JSON), &res.solution)?;
            output::write_csv(&out.join(TRACE_CSV), &res.trace, TRACE_HEADER)?;
            let s = &res.solution;
            println!("order        {}", runner::order_label(&s.ordering.order));
            println!("EE           {:.6e} bits/J", s.ee_bits_per_joule);
            println!("sum rate     {:.6e} bit/s", s.sum_rate_bps);
            println!("power        {:.6e} W", s.power_w);
            println!("feasible     {}", s.feasibility.feasible);
            println!("converged    {}", s.converged);
            true
        }
        Command::Sweep => {
            let rows = runner::run_sweep(&config)?;
            output::write_csv(&out.join(RESULTS_CSV), &rows, ResultRow::HEADER)?;
            output::write_json(&out.join(RESULTS_JSON), &rows)?;
            for r in &rows {
                println!("{:>8} {:<20} {}  {}", r.sweep_value, r.scheme, fmt_opt(r.ee_bits_per_joule), r.error);
            }
            true
        }
        Command::ValidateDe => {
            let report = runner::validate_de(&config)?;
            output::write_csv(&out.join(RESULTS_CSV), &report.rows, DeRow::HEADER)?;
            output::write_json(&out.join(RESULTS_JSON), &report)?;
            for r in &report.rows {
                println!(
                    "{:>8}  de {}  mc {}  err {}  exact-mc err {}  {}",
                    r.sweep_value,
                    fmt_opt(r.de_ee),
                    fmt_opt(r.mc_ee),
                    fmt_opt(r.rel_error),
                    fmt_opt(r.rel_error_exact),
                    r.error
                );
            }
            println!(
                "max error {:.3e}, mean {:.3e}, threshold {:.0e}: {}",
                report.max_error,
                report.mean_error,
                report.threshold,
                if report.pass { "PASS" } else { "FAIL" }
            );
            report.pass
        }
        Command::CompareOrders => {
            let report = runner::compare_orders(&config)?;
            output::write_csv(&out.join(RESULTS_CSV), &report.rows, OrderRow::HEADER)?;
            output::write_json(&out.join(RESULTS_JSON), &report)?;
            for r in &report.rows {
                println!("{:>8} {:<11} {}  {}", r.sweep_value, format!("{:?}", r.method), fmt_opt(r.ee_bits_per_joule), r.error);
            }
            let ok = report.chain.iter().all(|&c| c);
            println!("exhaustive >= greedy >= reverse at every point: {ok}");
            ok
        }
        Command::CompareSchemes => {
            let report = runner::compare_schemes(&config)?;
            output::write_csv(&out.join(RESULTS_CSV), &report.rows, ResultRow::HEADER)?;
            output::write_json(&out.join(RESULTS_JSON), &report)?;
            for (v, (a, b)) in config.sweep.values.iter().zip(report.access_chain.iter().zip(&report.backoff_chain)) {
                println!("{v:>8}  rsma>=noma>=sdma>=fdma>=tdma {a}  rsma>=adaptive>=worst-case {b}");
            }
            true
        }
    };
    eprintln!("done in {:.1?}", started.elapsed());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
