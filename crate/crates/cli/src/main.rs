//! `twl`: generate weight pairs, evaluate two-weight constants and run the
//! verification suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use twl_core::kernel::KernelFamily;
use twl_core::lab::{self, commands, CalibrationTable, Report, RunConfig, Suite};
use twl_core::AtomicMeasure;

#[derive(Parser, Debug)]
#[command(name = "twl", version, about = "Two-weight lab for fractional Calderon-Zygmund operators")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dimension.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Fractional order.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Kernel: hilbert, riesz:<j>, riesz_vector or cauchy.
    #[arg(long, global = true)]
    kernel: Option<KernelFamily>,
    /// Suite to run; repeat for several.
    #[arg(long, global = true)]
    suite: Vec<Suite>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a weight pair; writes sigma.json and omega.json into --out when given.
    Gen,
    /// Evaluate every constant of a weight pair.
    Constants {
        /// Measure file for sigma.
        #[arg(long, requires = "omega")]
        sigma: Option<PathBuf>,
        /// Measure file for omega.
        #[arg(long, requires = "sigma")]
        omega: Option<PathBuf>,
    },
    /// Stopping tree and Haar coefficients of a function on sigma.
    Decompose {
        /// Measure file for sigma.
        #[arg(long)]
        sigma: Option<PathBuf>,
        /// JSON array with the value of the function at each atom.
        #[arg(long)]
        f: Option<PathBuf>,
    },
    /// Size decomposition of a sampled pair collection.
    SizeLemma {
        /// Contraction parameter.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
    },
    /// Run the selected suites against the calibration table.
    Verify {
        /// Calibration table; the shipped one by default.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Run the configured suites and write the report.
    Report {
        /// Calibration table; the shipped one by default.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Rerun the calibrated suites without bounds and freeze their maxima.
    Calibrate,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(n) = cli.n {
        c.n = n;
    }
    if let Some(alpha) = cli.alpha {
        c.alpha = alpha;
    }
    if let Some(kernel) = cli.kernel {
        c.kernel = kernel;
    }
    if !cli.suite.is_empty() {
        c.suites = cli.suite.clone();
    }
    c.out = cli.out.clone();
    Ok(c)
}

fn read_measure(path: &Path) -> Result<AtomicMeasure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    AtomicMeasure::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn table(path: &Option<PathBuf>) -> Result<CalibrationTable> {
    Ok(match path {
        Some(p) => CalibrationTable::load(p)?,
        None => CalibrationTable::shipped()?,
    })
}

fn finish(report: &Report, out: Option<&Path>) -> Result<ExitCode> {
    if let Some(path) = out {
        lab::write_report(report, path)?;
    }
    for r in &report.suites {
        let profile = r.profile.as_deref().unwrap_or("-");
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<24} {:<16} instances={:<5} skipped={:<4} max_ratio={:.6e} violations={}",
            r.name, profile, r.instances, r.skipped, r.max_ratio, r.violations
        );
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::Gen => {
            let (sigma, omega) = lab::generate(&cfg);
            match &cfg.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    write_json(&sigma, &dir.join("sigma.json"))?;
                    write_json(&omega, &dir.join("omega.json"))?;
                }
                None => print_json(&serde_json::json!({ "sigma": sigma, "omega": omega }))?,
            }
        }
        Command::Constants { sigma, omega } => {
            let (s, w) = match (sigma, omega) {
                (Some(s), Some(w)) => (read_measure(s)?, read_measure(w)?),
                _ => lab::generate(&cfg),
            };
            if s.n != cfg.n {
                bail!("measures have dimension {} but --n is {}", s.n, cfg.n);
            }
            print_json(&commands::constants_report(&cfg, &s, &w)?)?;
        }
        Command::Decompose { sigma, f } => {
            let s = match sigma {
                Some(path) => read_measure(path)?,
                None => lab::generate(&cfg).0,
            };
            let values = match f {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
                }
                None => None,
            };
            print_json(&commands::decompose(&cfg, &s, values)?)?;
        }
        Command::SizeLemma { eps } => {
            let summary = commands::size_lemma(&cfg, *eps)?;
            print_json(&summary)?;
            let ok = summary.partition_ok && summary.admissible_ok && summary.contraction_ok;
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Verify { calibration } => {
            if cli.suite.is_empty() {
                bail!("verify needs at least one --suite");
            }
            let report = lab::run(&cfg, Some(&table(calibration)?))?;
            return finish(&report, cfg.out.as_deref());
        }
        Command::Report { calibration } => {
            let report = lab::run(&cfg, Some(&table(calibration)?))?;
            let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
            return finish(&report, Some(&out));
        }
        Command::Calibrate => {
            let Some(out) = &cfg.out else { bail!("calibrate needs --out") };
            let t = lab::calibrate(&cfg)?;
            t.save(out)?;
            print_json(&t.constants)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
