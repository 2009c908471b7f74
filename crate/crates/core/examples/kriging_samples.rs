//! Condition a Gaussian log-permeability field on the well data of test
//! case 2 and draw posterior samples.
//!
//! Usage: kriging_samples [n_samples] [out_dir]

use mgrl::environment::EnvironmentConfig;
use mgrl::uncertainty::{KrigingModel, KrigingSampler, WELL_LOG_PERMEABILITY};
use rand::SeedableRng;

fn main() -> mgrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "kriging_samples".into()));
    let config = EnvironmentConfig::case2_on(15, 45);

    let model = KrigingModel::for_wells(&config)?;
    let worst = model
        .locations()
        .iter()
        .map(|&x| {
            let (m, v) = model.posterior(x);
            (m - WELL_LOG_PERMEABILITY).abs().max(v.abs())
        })
        .fold(0.0, f64::max);
    println!("{} conditioning wells, max deviation from exact interpolation {worst:.2e}", model.len());
    let (x, y) = (config.lx / 4.0, config.ly / 2.0);
    let (m, v) = model.posterior((x, y));
    println!("posterior at ({x:.0}, {y:.0}): mean {m:.3}, variance {v:.3}");

    let sampler = KrigingSampler::for_case(&config)?;
    std::fs::create_dir_all(&dir)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for i in 0..n {
        let field = sampler.sample(&mut rng)?;
        let v = field.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let path = dir.join(format!("sample_{i}.csv"));
        std::fs::write(&path, field.to_csv())?;
        println!("{}: mean log-permeability {mean:.3}", path.display());
    }
    Ok(())
}
