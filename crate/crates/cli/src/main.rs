use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blapn_cli::compare::compare_reports;
use blapn_cli::config::ExperimentConfig;
use blapn_cli::error::{CliError, CliResult};
use blapn_cli::run::{self, with_workers};
use clap::{Parser, Subcommand};
use serde_json::json;

/// Best linear approximation experiments on nonlinear systems with process noise.
#[derive(Debug, Parser)]
#[command(name = "blapn", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: the configured one, else `blapn-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the multisine excitation of every realization.
    Generate,
    /// Simulate the experiment and write the record bundle.
    Simulate,
    /// Estimate the BLA from a record bundle.
    Estimate {
        /// Bundle directory (default: `<out>/bundle`).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Split one realization's output into its BLA constituents.
    Decompose,
    /// Simulate, estimate, decompose and check against the analytic BLA.
    Run,
    /// Compare the BLA reports of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// Run the reference Hammerstein experiment.
    DemoHammerstein,
}

impl Cli {
    fn load_config(&self) -> CliResult<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
        let mut config = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    fn out_dir(&self, config: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("blapn-out"))
    }
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn finish_run(summary: &run::Summary, out: &Path) -> CliResult<()> {
    print(json!({
        "command": "run",
        "out": out,
        "excited_bins": summary.excited_bins,
        "defined_bins": summary.defined_bins,
        "fraction_inside": summary.oracle.as_ref().map(|o| o.fraction_inside),
        "pass": summary.pass,
    }));
    if summary.pass {
        Ok(())
    } else {
        let o = summary.oracle.as_ref().expect("only the oracle can fail a run");
        Err(CliError::Tolerance(format!(
            "{:.2}% of bins inside the {} sigma band, need {:.2}%",
            100.0 * o.fraction_inside,
            o.band_sigma,
            100.0 * o.min_fraction
        )))
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config));
            let files = run::generate(&config, &out)?;
            print(json!({"command": "generate", "out": out, "files": files.len()}));
        }
        Command::Simulate => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config));
            let system = config.resolve_system()?;
            let record = with_workers(cli.workers, || run::simulate(&config, &system))??;
            let dir = out.join(run::BUNDLE_DIR);
            blapn::estimator::write_record_bundle(&dir, &record)?;
            print(json!({"command": "simulate", "bundle": dir}));
        }
        Command::Estimate { bundle } => {
            let out = cli.out_dir(None);
            let bundle = bundle.clone().unwrap_or_else(|| out.join(run::BUNDLE_DIR));
            let est = run::estimate_bundle(&bundle, &out)?;
            print(json!({
                "command": "estimate",
                "bla": out.join(run::BLA_FILE),
                "excited_bins": est.bins.len(),
                "defined_bins": est.defined_bins().count(),
            }));
        }
        Command::Decompose => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config));
            let system = config.resolve_system()?;
            let report = with_workers(cli.workers, || run::decompose(&config, &system, &out))??;
            print(json!({"command": "decompose", "out": out, "rms": report.rms}));
        }
        Command::Run => {
            let config = cli.load_config()?;
            let out = cli.out_dir(Some(&config));
            let summary = with_workers(cli.workers, || run::run_experiment(&config, &out))??;
            finish_run(&summary, &out)?;
        }
        Command::Compare { a, b, tolerance } => {
            let report = compare_reports(a, b, *tolerance)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                run::write_json(&out.join("compare.json"), &report)?;
            }
            print(serde_json::to_value(&report).map_err(|e| CliError::Data(e.to_string()))?);
            if !report.within_tolerance {
                return Err(CliError::Tolerance(format!(
                    "max |G_B - G_A| = {:e} exceeds {:e}",
                    report.max_abs_diff, tolerance
                )));
            }
        }
        Command::DemoHammerstein => {
            let mut config = match &cli.config {
                Some(_) => cli.load_config()?,
                None => ExperimentConfig::demo_hammerstein(),
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("blapn-demo"));
            let summary = with_workers(cli.workers, || run::run_experiment(&config, &out))??;
            finish_run(&summary, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(report.exit_code as u8)
        }
    }
}
