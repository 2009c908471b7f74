//! Cluster channelized samples by flow response and pick training and
//! held-out evaluation fields.
//!
//! Usage: sample_library [n] [clusters] [out_dir]

use mgrl::environment::EnvironmentConfig;
use mgrl::uncertainty::{build_sample_library, SampleRole};

fn main() -> mgrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let l: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "library".into()));
    let config = EnvironmentConfig::case1_on(29);

    let start = std::time::Instant::now();
    let library = build_sample_library(&config, n, l, 1)?;
    println!("{n} samples clustered into {l} in {:.1} s", start.elapsed().as_secs_f64());
    for c in 0..l {
        let members: Vec<_> = library.manifest().samples.iter().filter(|e| e.cluster == c).collect();
        let pick = |role| members.iter().find(|e| e.role == role).map(|e| e.id.to_string());
        println!(
            "cluster {c}: {} members, training {}, evaluation {}",
            members.len(),
            pick(SampleRole::Train).unwrap_or_default(),
            pick(SampleRole::Eval).unwrap_or_else(|| "-".into())
        );
    }
    library.save(&dir)?;
    println!("saved to {}", dir.display());
    Ok(())
}
