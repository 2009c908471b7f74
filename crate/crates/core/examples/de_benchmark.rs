//! Optimize open-loop controls for one sample with differential evolution.
//!
//! Usage: de_benchmark [population] [iterations]

use mgrl::baseline_de::{de_wellcontrol, DeConfig};
use mgrl::environment::EnvironmentConfig;
use mgrl::uncertainty::sample_g1;
use rand::SeedableRng;

fn main() -> mgrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let population: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let config = EnvironmentConfig::case1_on(29);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let perm = sample_g1(config.fine_grid()?, &mut rng)?;

    let de = DeConfig {
        population,
        iterations,
        ..DeConfig::desk()
    };
    let start = std::time::Instant::now();
    let out = de_wellcontrol(&perm, &config, &de)?;
    for (g, best) in out.history.iter().enumerate().step_by((iterations / 8).max(1)) {
        println!("generation {g:4}: best recovery {best:.4}");
    }
    println!(
        "base {:.4} -> DE {:.4} after {} simulations ({:.1} s)",
        out.base_recovery,
        out.best_recovery,
        out.evaluations,
        start.elapsed().as_secs_f64()
    );
    for (step, w) in out.controls.iter().enumerate() {
        let row: Vec<String> = w.as_slice().iter().map(|v| format!("{v:.2}")).collect();
        println!("step {}: {}", step + 1, row.join(" "));
    }
    Ok(())
}
