use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zobilevel_harness::experiment::{parse_validation_csv, resolve_out_dir, validation_to_csv, OUT_ENV};
use zobilevel_harness::{emit_plots, run_experiment, selftest, ExperimentConfig, ExperimentKind, HarnessError, Result, ResultBundle};

#[derive(Parser)]
#[command(name = "zobilevel", version, about = "Derivative-free bilevel learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate baselines and validation, write a result bundle and its plots.
    Run(Common),
    /// Recompute the validation errors of a bundle and compare with the stored ones.
    Validate(Common),
    /// Render the SVG figures of an existing bundle.
    Plot(Common),
    /// Run the built-in property checks.
    Selftest(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; keys not given take the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// denoise, oed or toy_convex (overrides the config file).
    #[arg(long)]
    experiment: Option<String>,
    /// Algorithm seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Bundle directory. Defaults to $ZOBILEVEL_OUT/<experiment>, else results/<experiment>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for batch evaluation.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let kind: Option<ExperimentKind> = self.experiment.as_deref().map(str::parse).transpose()?;
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, kind)?,
            None => ExperimentConfig::defaults(kind.unwrap_or(ExperimentKind::Denoise)),
        };
        if let Some(k) = kind {
            if k != cfg.experiment {
                return Err(HarnessError::Config(format!("--experiment {k} contradicts the config file ({})", cfg.experiment)));
            }
        }
        if let Some(seed) = self.seed {
            cfg.seeds.algorithm = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn bundle_dir(&self) -> Result<PathBuf> {
        match &self.out {
            Some(dir) => Ok(dir.clone()),
            None => Ok(resolve_out_dir(&self.config()?)),
        }
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(HarnessError::Config("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            c.init_threads()?;
            let cfg = c.config()?;
            eprintln!(
                "running {} (N = {}, seed {}); default output root from ${OUT_ENV}",
                cfg.experiment, cfg.schedules.n_iters, cfg.seeds.algorithm
            );
            let bundle = run_experiment(&cfg)?;
            for m in &bundle.summary.methods {
                println!("{:<40} median error {:.6}", m.method, m.median_error);
            }
            for p in emit_plots(&bundle)? {
                println!("wrote {}", p.display());
            }
            println!("bundle: {}", bundle.dir.display());
        }
        Command::Validate(c) => {
            c.init_threads()?;
            let bundle = ResultBundle::load(&c.bundle_dir()?)?;
            let fresh = zobilevel_harness::experiment::revalidate(&bundle)?;
            let stored = bundle.validation()?;
            let recomputed = parse_validation_csv(&validation_to_csv(&fresh))?;
            for m in &fresh {
                println!("{:<40} median error {:.6}", m.method, m.median());
            }
            if stored != recomputed {
                return Err(HarnessError::Bundle("recomputed validation errors differ from validation.csv".into()));
            }
            println!("validation.csv reproduced");
        }
        Command::Plot(c) => {
            let bundle = ResultBundle::load(&c.bundle_dir()?)?;
            for p in emit_plots(&bundle)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Selftest(c) => {
            c.init_threads()?;
            let checks = selftest::run_all(c.seed.unwrap_or(0));
            let mut failed = 0;
            for ch in &checks {
                println!("[{}] {}: {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
                failed += usize::from(!ch.passed);
            }
            if failed > 0 {
                return Err(HarnessError::Check(format!("{failed} of {} checks", checks.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
