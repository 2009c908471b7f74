//! Drive a complete run from a TOML config, as the `mgrl` binary does,
//! then repeat it from the written manifest.
//!
//! Usage: experiment_config [out_dir]

use mgrl::experiment::{run_experiment, ExperimentConfig, MANIFEST_FILE};

const CONFIG: &str = r#"
case = 1
framework = "fixed-multigrid"
seed = 5
desk_scale = true
grid = [15, 15]
runtime_episodes = 10

[schedule]
betas = [0.5, 1.0]
episode_limits = [192, 320]
window = "inf"
tolerance = 0.0

[ppo]
epochs = 5

[library]
samples = 16
clusters = 4
"#;

fn main() -> mgrl::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "experiment_run".into()));
    let mut config = ExperimentConfig::from_toml(CONFIG)?;
    config.output = Some(dir.join("first"));
    let first = run_experiment(&config.resolve()?)?;
    for r in &first.history {
        println!("iter {} beta {} return {:.5}", r.iteration, r.beta, r.value);
    }

    let mut again = ExperimentConfig::load(&dir.join("first").join(MANIFEST_FILE))?;
    again.output = Some(dir.join("repeat"));
    run_experiment(&again.resolve()?)?;
    let a = std::fs::read(dir.join("first/returns.csv"))?;
    let b = std::fs::read(dir.join("repeat/returns.csv"))?;
    println!("returns.csv identical on repeat: {}", a == b);
    Ok(())
}
