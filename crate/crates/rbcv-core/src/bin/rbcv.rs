//! Command-line front end: offline basis construction, online sweeps,
//! single queries and the oracle battery.

use clap::{Args, Parser, Subcommand};
use rbcv_core::config::ExperimentConfig;
use rbcv_core::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rbcv",
    about = "Reduced-basis control variates for parametrized SDE expectations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the algorithm (1 recycled means, 2 Kolmogorov gradients).
    #[arg(long, value_parser = clap::value_parser!(u8))]
    algo: Option<u8>,
    /// Override the selection criterion.
    #[arg(long, value_parser = ["abs", "rel"])]
    criterion: Option<String>,
    /// Override the maximal basis size.
    #[arg(long, value_name = "N")]
    imax: Option<usize>,
    /// Override the trial-sampling seed.
    #[arg(long, value_name = "N")]
    seed_trial: Option<u64>,
    /// Override the offline-paths seed.
    #[arg(long, value_name = "N")]
    seed_offline: Option<u64>,
    /// Override the online-paths seed.
    #[arg(long, value_name = "N")]
    seed_online: Option<u64>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the worker count (0 = all cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a reduced basis: greedy selection plus per-element payloads.
    Offline {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate a stored basis over a fresh test sample.
    Online {
        #[command(flatten)]
        common: CommonOpts,
        /// Basis manifest (or the directory holding basis.json).
        #[arg(long, value_name = "PATH")]
        basis: PathBuf,
        /// Test sample box: the configured one, or twice as wide.
        #[arg(long, value_name = "BOX", value_parser = ["paper", "wide"])]
        test_box: Option<String>,
    },
    /// One estimation at an explicit parameter vector.
    Single {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated full coordinate vector.
        #[arg(long, value_name = "V1,V2,...")]
        lambda: String,
        /// Optional basis manifest for a controlled estimate.
        #[arg(long, value_name = "PATH")]
        basis: Option<PathBuf>,
        /// Override the replicate count.
        #[arg(long, value_name = "N")]
        m: Option<usize>,
    },
    /// Run the built-in closed-form oracle battery.
    OracleCheck,
}

fn apply_overrides(cfg: &mut ExperimentConfig, common: &CommonOpts) {
    if let Some(a) = common.algo {
        cfg.algorithm = a;
    }
    if let Some(c) = &common.criterion {
        cfg.criterion = c.clone();
    }
    if let Some(i) = common.imax {
        cfg.i_max = i;
    }
    if let Some(s) = common.seed_trial {
        cfg.seed_trial = s;
    }
    if let Some(s) = common.seed_offline {
        cfg.seed_offline = s;
    }
    if let Some(s) = common.seed_online {
        cfg.seed_online = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
}

fn run() -> rbcv_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Offline { common } => {
            let mut cfg = ExperimentConfig::load(&common.config)?;
            apply_overrides(&mut cfg, &common);
            let exp = cfg.resolve()?;
            let out = runner::run_offline(&exp)?;
            println!(
                "offline: {} elements -> {}",
                out.basis.len(),
                out.manifest_path.display()
            );
            println!("trace: {}", out.trace_path.display());
        }
        Command::Online {
            common,
            basis,
            test_box,
        } => {
            let mut cfg = ExperimentConfig::load(&common.config)?;
            apply_overrides(&mut cfg, &common);
            if let Some(tb) = test_box {
                cfg.test_box = tb;
            }
            let exp = cfg.resolve()?;
            let out = runner::run_online(&exp, &basis)?;
            println!("results: {}", out.results_path.display());
            println!("summary: {}", out.summary_path.display());
            if let Some(last) = out.summary.last() {
                println!(
                    "reduction at full basis: min {:.3e}, mean {:.3e}, max {:.3e}",
                    last.reduction_min, last.reduction_mean, last.reduction_max
                );
            }
        }
        Command::Single {
            common,
            lambda,
            basis,
            m,
        } => {
            let mut cfg = ExperimentConfig::load(&common.config)?;
            apply_overrides(&mut cfg, &common);
            let exp = cfg.resolve()?;
            let point = exp.parse_lambda(&lambda)?;
            if !exp.parameter_box.contains(&point) {
                eprintln!("warning: parameter lies outside the configured box (extrapolating)");
            }
            let out = runner::run_single(&exp, &point, basis.as_deref(), m)?;
            let est = &out.estimate;
            println!("mean        {}", runner::fmt_float(est.report.mean));
            println!("variance    {}", runner::fmt_float(est.report.variance));
            println!("half_width  {}", runner::fmt_float(est.report.half_width));
            println!("replicates  {}", est.report.m);
            if !est.mu.is_empty() {
                let mu: Vec<String> = est.mu.iter().map(|v| format!("{v:.6e}")).collect();
                println!("mu          [{}]", mu.join(", "));
                println!(
                    "reduction   {}",
                    runner::fmt_float(est.reduction_factor())
                );
                println!("condition   {:.3e}", est.diagnostics.solve.condition);
            }
            for w in &est.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::OracleCheck => {
            let mut failed = false;
            for check in runner::oracle_checks() {
                let status = if check.pass { "PASS" } else { "FAIL" };
                println!("{status}  {:<28} {}", check.name, check.detail);
                failed |= !check.pass;
            }
            if failed {
                return Err(rbcv_core::Error::Solver("oracle battery failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
