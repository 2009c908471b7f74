//! Train a policy on a small library with the adaptive fidelity schedule
//! and compare it with the base policy on held-out samples.
//!
//! Usage: train_adaptive [seed] [total_episodes]

use mgrl::environment::EnvironmentConfig;
use mgrl::rl_ppo::{evaluate_per_sample, PpoAgent, PpoConfig};
use mgrl::scheduler::{run_training, FidelitySchedule, RuntimeProfile, TrainingEvent};
use mgrl::uncertainty::build_sample_library;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> mgrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let total: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1600);
    let config = EnvironmentConfig::case1_on(29);
    let library = build_sample_library(&config, 40, 4, seed)?;
    let training = library.training_fields();
    let evaluation = library.evaluation_fields();

    let betas = vec![0.25, 0.5, 1.0];
    let limits = vec![total / 3, 2 * total / 3, total];
    let schedule = FidelitySchedule::adaptive(betas.clone(), limits, 10, 0.002);
    let ppo = PpoConfig::desk();
    let profile = RuntimeProfile::measure(&config, &training, &betas, 20)?;
    for (b, s) in profile.betas.iter().zip(&profile.seconds) {
        println!("beta {b}: {:.2} ms per episode", s * 1e3);
    }

    let agent = PpoAgent::new(config.observation_len(), config.action_len(), &ppo, seed)?;
    let report = run_training(&schedule, &ppo, &config, &training, agent, profile, seed, |event| {
        match event {
            TrainingEvent::Iteration(r) => println!(
                "iter {:3}  beta {:4}  episodes {:5}  equivalent {:7.1}  return {:.4}",
                r.iteration, r.beta, r.episodes, r.equivalent_episodes, r.value
            ),
            TrainingEvent::FidelityDone { beta, .. } => println!("-- leaving beta {beta}"),
        }
        Ok(())
    })?;
    if let Some(e) = &report.failure {
        println!("training stopped early: {e}");
    }

    let base = PpoAgent::base_policy(config.observation_len(), config.action_len(), &[1])?;
    let learned = mean(&evaluate_per_sample(&report.agent, &config, &evaluation)?);
    let reference = mean(&evaluate_per_sample(&base, &config, &evaluation)?);
    println!(
        "held-out recovery: learned {learned:.4}, base {reference:.4} ({:+.1}%)",
        100.0 * (learned / reference - 1.0)
    );
    println!("equivalent fine-grid episodes used: {:.0}", report.equivalent_episodes);
    Ok(())
}
