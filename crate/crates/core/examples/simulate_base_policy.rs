//! Run the equal-weight policy on a channelized sample at every fidelity
//! and write the fine-grid trace of the finest run.
//!
//! Usage: simulate_base_policy [trace.csv]

use mgrl::environment::{base_policy, trace_episode, EnvironmentConfig, MultiGridEnv};
use mgrl::uncertainty::sample_g1;
use rand::SeedableRng;

fn main() -> mgrl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "base_trace.csv".into());
    let config = EnvironmentConfig::case1();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let perm = sample_g1(config.fine_grid()?, &mut rng)?;

    for beta in [0.25, 0.5, 1.0] {
        let mut env = MultiGridEnv::new(config.with_beta(beta))?;
        let policy = base_policy(env.config());
        let start = std::time::Instant::now();
        let trace = trace_episode(&mut env, &perm, policy)?;
        let g = env.internal_grid();
        println!(
            "beta {beta}: simulated on {}x{}, recovery {:.4}, {:.1} ms",
            g.nx(),
            g.ny(),
            trace.recovery,
            start.elapsed().as_secs_f64() * 1e3
        );
        if beta == 1.0 {
            trace.write_csv(std::path::Path::new(&out))?;
            println!("fine trace written to {out}");
        }
    }
    Ok(())
}
