//! `pvi`: run, check, evaluate and sweep predictive variational inference
//! experiments described by a JSON config.
//!
//! Exit codes: 0 on success, 1 on a runtime or tolerance failure, 2 when the
//! config, data or inputs fail validation. Failures also write `error.json`
//! to the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvi_core::experiment::{
    evaluate, execute, gradcheck, run_sweep, summary_json, sweep_failed, write_run_outputs, write_sweep_csv, PhiFile,
    RunConfig,
};
use pvi_core::models::Dataset;
use pvi_core::PviError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "pvi", version, about = "Predictive variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed; for sweeps it replaces the seed axis.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit once; writes data.csv, trace.csv, summary.json, phi.json and snapshots.json.
    Run(Common),
    /// Finite-difference and replication checks of the configured estimator; writes gradcheck.json.
    Gradcheck(Common),
    /// Held-out scores and heterogeneity ratios of saved parameters; writes report.json, scores.csv and heterogeneity.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameters saved by `run` (phi.json).
        phi: PathBuf,
        /// Held-out data CSV.
        test: PathBuf,
    },
    /// Runs the cross product of the config's sweep axes; writes sweep.csv.
    Sweep(Common),
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<PviError> for Failure {
    fn from(e: PviError) -> Self {
        let (code, kind) = match &e {
            PviError::Config(_) => (2, "config"),
            PviError::Data(_) => (2, "data"),
            PviError::Contract(_) => (2, "contract"),
            PviError::BoundViolated { .. } => (1, "bound_violated"),
            PviError::Numerical(_) => (1, "numerical"),
            PviError::Io(_) => (1, "io"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn runtime(kind: &'static str, message: String) -> Self {
        Failure { code: 1, kind, message }
    }

    fn invalid(kind: &'static str, message: String) -> Self {
        Failure { code: 2, kind, message }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: u8,
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        if let Some(s) = &mut cfg.sweep {
            s.seeds.clear();
        }
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::runtime("io", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::runtime("io", format!("{}: {e}", path.display())))
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime("io", format!("{}: {e}", dir.display())))
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let outcome = execute(&cfg)?;
    write_run_outputs(&outcome, &common.out)?;
    let s = &outcome.summary;
    if s.failed {
        return Err(Failure::runtime(
            "run_failed",
            format!("{} of {} iterations were flagged", s.flagged_iterations, s.iterations),
        ));
    }
    print!("{}", summary_json(s));
    Ok(())
}

fn cmd_gradcheck(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let report = gradcheck(&cfg)?;
    create_out(&common.out)?;
    write_json(&common.out.join("gradcheck.json"), &report)?;
    println!(
        "{} / {}: max relative error {:e} (tolerance {:e})",
        report.estimator.name(),
        report.score.name(),
        report.fd.max_rel_error,
        report.fd.tolerance
    );
    for r in &report.replications {
        println!("M = {}: max |z| = {:.2} over {} replications", r.mc_size, r.max_z, r.replications);
    }
    if report.passed {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !report.fd.offending.is_empty() {
        parts.push(format!("finite differences disagree at coordinates {:?}", report.fd.offending));
    }
    for r in report.replications.iter().filter(|r| !r.passed) {
        parts.push(format!("replication mean at M = {} is {:.2} SE from the analytic gradient", r.mc_size, r.max_z));
    }
    Err(Failure::runtime("tolerance", parts.join("; ")))
}

fn cmd_eval(common: &Common, phi: &Path, test: &Path) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let saved = PhiFile::load(phi).map_err(|e| Failure::invalid("input", format!("cannot read parameters {}: {e}", phi.display())))?;
    if saved.family != cfg.family {
        return Err(Failure::invalid(
            "input",
            format!("parameters were saved for {:?}, the config uses {:?}", saved.family, cfg.family),
        ));
    }
    let test = Dataset::load_csv(test).map_err(|e| Failure::invalid("input", format!("cannot read test data {}: {e}", test.display())))?;
    let report = evaluate(&cfg, &saved.phi, &test)?;
    create_out(&common.out)?;
    write_json(&common.out.join("report.json"), &report)?;
    let csv_file = |name: &str| {
        fs::File::create(common.out.join(name)).map_err(|e| Failure::runtime("io", format!("{name}: {e}")))
    };
    report.scores.write_csv(csv_file("scores.csv")?)?;
    report.heterogeneity.write_csv(csv_file("heterogeneity.csv")?)?;
    for r in &report.scores.rows {
        println!("{:>10}: {:.6} ± {:.6} (n = {})", r.score.name(), r.mean, r.std_error, r.n_test);
    }
    let flagged = report.heterogeneity.flagged();
    if !flagged.is_empty() {
        println!("heterogeneous vs {}: {}", report.reference, flagged.join(", "));
    }
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let rows = run_sweep(&cfg, common.jobs)?;
    create_out(&common.out)?;
    let path = common.out.join("sweep.csv");
    let file = fs::File::create(&path).map_err(|e| Failure::runtime("io", format!("{}: {e}", path.display())))?;
    write_sweep_csv(&rows, file)?;
    println!("{} cells written to {}", rows.len(), path.display());
    if sweep_failed(&rows) {
        let bad: Vec<String> = rows
            .iter()
            .filter(|r| r.outcome.as_ref().map(|s| s.failed).unwrap_or(true))
            .map(|r| r.cell.index.to_string())
            .collect();
        return Err(Failure::runtime("sweep_cells_failed", format!("cells {} failed", bad.join(", "))));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, result) = match &cli.command {
        Command::Run(c) => (c, cmd_run(c)),
        Command::Gradcheck(c) => (c, cmd_gradcheck(c)),
        Command::Eval { common, phi, test } => (common, cmd_eval(common, phi, test)),
        Command::Sweep(c) => (c, cmd_sweep(c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error ({}): {}", f.kind, f.message);
            let report = ErrorReport {
                error: f.kind,
                message: &f.message,
                exit_code: f.code,
            };
            if fs::create_dir_all(&common.out).is_ok() {
                let _ = write_json(&common.out.join("error.json"), &report);
            }
            ExitCode::from(f.code)
        }
    }
}
