use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use distmem::harness::{
    load_config, report_bounds, run_experiment, run_sweep, selftest, HarnessError, SweepAxis,
};

#[derive(Parser)]
#[command(name = "distmem", version, about = "Distributed online associative memory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured protocol over all seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Vary one parameter and record final regrets.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// T, rho or y0
        #[arg(long)]
        axis: String,
        /// Comma-separated values
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate closed-form regret bounds for a finished run.
    Bounds {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Cross-check core routines against reference implementations.
    Selftest,
}

fn parse_values(s: &str) -> Result<Vec<f64>, HarnessError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| HarnessError::Invalid {
                    key: "values".into(),
                    constraint: format!("`{v}` is not a finite number"),
                })
        })
        .collect()
}

fn execute(cmd: Command) -> Result<bool, HarnessError> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let report = run_experiment(&cfg, Some(&out))?;
            let mut ok = true;
            for (i, seed) in report.seeds.iter().enumerate() {
                match seed {
                    Ok(s) => {
                        for p in &s.protocols {
                            println!("seed {i} {:<8} final regret {:.6e}", p.protocol, p.trace.final_regret());
                        }
                    }
                    Err(e) => {
                        eprintln!("seed {i} failed: {e}");
                        ok = false;
                    }
                }
            }
            if let Some(m) = &report.manifest_path {
                println!("manifest: {}", m.display());
            }
            Ok(ok)
        }
        Command::Sweep { config, axis, values, out } => {
            let cfg = load_config(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let values = parse_values(&values)?;
            let report = run_sweep(&cfg, axis, &values, Some(&out))?;
            for &v in &report.values {
                for &p in &cfg.protocols {
                    let r = report.regrets(v, p);
                    let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
                    println!("{axis}={v} {p:<8} mean final regret {mean:.6e} over {} seeds", r.len());
                }
            }
            for (v, s, e) in &report.failures {
                eprintln!("{axis}={v} seed {s} failed: {e}");
            }
            if let Some(m) = &report.manifest_path {
                println!("manifest: {}", m.display());
            }
            Ok(report.failures.is_empty())
        }
        Command::Bounds { manifest } => {
            let (path, rows) = report_bounds(&manifest)?;
            for r in &rows {
                match r.bound {
                    Some(b) => println!(
                        "seed {} {:<8} regret {:.6e} bound {:.6e} {}",
                        r.seed_index,
                        r.protocol,
                        r.measured,
                        b,
                        if r.measured <= b { "ok" } else { "EXCEEDED" }
                    ),
                    None => println!("seed {} {:<8} regret {:.6e} bound NA", r.seed_index, r.protocol, r.measured),
                }
            }
            println!("bounds: {}", path.display());
            Ok(true)
        }
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
