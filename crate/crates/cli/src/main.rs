use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inclusion_core::experiment::{cmd_sample, cmd_simulate, cmd_study, ExperimentConfig};
use inclusion_core::verify::{is_suite, run_suite, QUICK_SUITES, STUDY_SUITES};

/// Bayesian reconstruction of absorption inclusions from projected
/// photoacoustic data.
#[derive(Parser)]
#[command(name = "inclusion-bayes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one noisy observation per noise level.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run one chain against a simulated observation.
    Sample {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        noise_index: usize,
        /// Chain seed; defaults to the one derived from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// All noise levels and replicates, with the error table.
    Study {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Property suites. `all` runs every quick suite; `star-study` and
    /// `level-study` must be named.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Replaces the desk preset of the study suites.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> inclusion_core::Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path),
            (None, Some(name)) => ExperimentConfig::preset(name),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

enum Failure {
    Usage(String),
    Suite,
}

impl From<inclusion_core::Error> for Failure {
    fn from(e: inclusion_core::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Suite) => ExitCode::from(2),
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { source, out } => {
            let config = source.load()?;
            for path in cmd_simulate(&config, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Sample {
            source,
            noise_index,
            seed,
            out,
        } => {
            let config = source.load()?;
            let result = cmd_sample(&config, noise_index, seed, &out)?;
            println!(
                "noise {:.0}%  seed {}  acceptance {:.3}  step {:.4}  L2 error {:.6}",
                100.0 * config.noise_levels[noise_index],
                result.chain_seed,
                result.record.acceptance_rate(),
                result.record.final_step,
                result.l2_error
            );
        }
        Command::Study { source, workers, out } => {
            let config = source.load()?;
            let (_, summary) = cmd_study(&config, workers, Some(&out))?;
            println!("noise     mean L2 error   relative spread");
            for s in &summary {
                println!("{:>5.1}%   {:<14.6}  {:.3}", 100.0 * s.noise, s.mean, s.spread);
            }
            println!("written to {}", out.join(&config.name).display());
        }
        Command::Verify { suite, config, workers } => {
            let config = config.as_deref().map(ExperimentConfig::load).transpose()?;
            return verify(&suite, config.as_ref(), workers);
        }
    }
    Ok(())
}

fn verify(suite: &str, config: Option<&ExperimentConfig>, workers: usize) -> Result<(), Failure> {
    let names: Vec<&str> = if suite == "all" {
        QUICK_SUITES.to_vec()
    } else if is_suite(suite) {
        vec![suite]
    } else {
        return Err(Failure::Usage(format!(
            "unknown suite `{suite}` (expected all, {}, {})",
            QUICK_SUITES.join(", "),
            STUDY_SUITES.join(", ")
        )));
    };
    let mut ok = true;
    for name in names {
        let report = run_suite(name, config, workers)?;
        print!("{report}");
        ok &= report.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Suite)
    }
}
