use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mgrl::experiment::{run_experiment, ExperimentConfig};
use mgrl::Error;

/// Train and evaluate robust well-control policies.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// Experiment config (TOML); a run's manifest.toml works too.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for rollouts and DE evaluations.
    #[arg(long, env = "MGRL_WORKERS")]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Use the reduced desk-scale defaults.
    #[arg(long)]
    desk_scale: bool,
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.output {
        config.output = Some(out);
    }
    config.desk_scale |= cli.desk_scale;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::config("--workers", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--workers", e.to_string()))?;
    }
    let resolved = config.resolve()?;
    let summary = run_experiment(&resolved)?;
    println!("output: {}", summary.output.display());
    if let Some(last) = summary.history.last() {
        println!(
            "final return {:.5} after {} episodes ({:.1} equivalent)",
            last.value, last.episodes, summary.equivalent_episodes
        );
    }
    if let Some(eval) = &summary.evaluation {
        println!(
            "held-out recovery {:.5} (base policy {:.5})",
            eval.mean_recovery(),
            eval.mean_base_recovery()
        );
    }
    for row in &summary.benchmark {
        println!("sample {} best recovery {:.5}", row.sample, row.best_recovery);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
