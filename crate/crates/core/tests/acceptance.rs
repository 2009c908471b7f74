//! Acceptance criteria 1 to 8. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use mgrl::baseline_de::{de_wellcontrol, DeConfig};
use mgrl::environment::{EnvironmentConfig, TestCase};
use mgrl::experiment::{run_experiment, ExperimentConfig, ExperimentSummary, Framework, MANIFEST_FILE};
use mgrl::grid::{build_partition, prolong, restrict_by_role, CartesianGrid, FieldRole, ScalarField};
use mgrl::rl_ppo::{gae, PpoAgent, PpoConfig};
use mgrl::scheduler::{is_converged, run_training, ConvergenceWindow, FidelitySchedule, RuntimeProfile, DEFAULT_GUARD};
use mgrl::simulator::ReservoirState;
use mgrl::uncertainty::{build_sample_library, KrigingModel, SampleLibrary, WELL_LOG_PERMEABILITY};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn operators() -> Outcome {
    let dims = [
        ((61, 61), 0.5, (30, 30)),
        ((61, 61), 0.25, (15, 15)),
        ((31, 91), 0.5, (15, 45)),
        ((31, 91), 0.25, (7, 22)),
    ];
    let dims_ok = dims
        .iter()
        .all(|&((m, n), b, want)| build_partition(m, n, b).map(|p| p.coarse_dims()).ok() == Some(want));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut round_trip_ok = true;
    let mut mass_ok = true;
    for _ in 0..200 {
        let (m, n) = (rng.random_range(1..70), rng.random_range(1..100));
        let beta = rng.random_range(0.05..=1.0);
        let Ok(map) = build_partition(m, n, beta) else { continue };
        let fine = CartesianGrid::new(m, n, m as f64, n as f64).unwrap();
        let coarse = map.coarse_grid(&fine).unwrap();
        let x: Vec<f64> = (0..coarse.cell_count()).map(|_| rng.random::<f64>()).collect();
        let field = ScalarField::new(coarse, x.clone(), FieldRole::Saturation).unwrap();
        let back = restrict_by_role(&prolong(&field, &map, &fine).unwrap(), &map).unwrap();
        round_trip_ok &= back.values() == &x[..];
        // Half-integer rates keep every partial sum exactly representable.
        let q: Vec<f64> = (0..m * n).map(|_| rng.random_range(-400..400) as f64 * 0.5).collect();
        let flows = ScalarField::new(fine, q.clone(), FieldRole::FlowControl).unwrap();
        mass_ok &= restrict_by_role(&flows, &map).unwrap().sum() == q.iter().sum::<f64>();
    }
    (
        dims_ok && round_trip_ok && mass_ok,
        format!("grid sizes {dims_ok}, mean round trip exact {round_trip_ok}, sum mass exact {mass_ok}"),
    )
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = common::StepAudit {
        min_saturation: f64::INFINITY,
        max_saturation: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..500 {
        let model = common::random_model(&mut rng, 15, 15);
        let mut state = ReservoirState::initial(model.grid(), rng.random_range(0.0..0.5)).unwrap();
        for _ in 0..3 {
            let flows = common::random_flows(&mut rng, &model);
            let duration = rng.random_range(5.0..200.0);
            let (audit, s) = common::audit_step(&model, &state, &flows, duration);
            worst.divergence = worst.divergence.max(audit.divergence);
            worst.mass_balance = worst.mass_balance.max(audit.mass_balance);
            worst.min_saturation = worst.min_saturation.min(audit.min_saturation);
            worst.max_saturation = worst.max_saturation.max(audit.max_saturation);
            state.saturation = ScalarField::new(*model.grid(), s, FieldRole::Saturation).unwrap();
        }
    }
    let pass = worst.divergence <= 1e-8
        && worst.mass_balance <= 1e-8
        && worst.min_saturation >= 0.0
        && worst.max_saturation <= 1.0;
    (
        pass,
        format!(
            "500 instances: divergence {:.1e}, mass balance {:.1e}, saturation in [{}, {}]",
            worst.divergence, worst.mass_balance, worst.min_saturation, worst.max_saturation
        ),
    )
}

fn ppo_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let worst = (0..50)
        .map(|_| {
            let (net, batch) = common::ppo::random_instance(&mut rng);
            common::ppo::gradient_error(&net, &batch)
        })
        .fold(0.0, f64::max);

    let rewards: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dones: Vec<bool> = (0..12).map(|t| t == 5).collect();
    let (gamma, last) = (0.97, 0.4);
    let (td, _) = gae(&rewards, &values, &dones, last, gamma, 0.0);
    let td_ok = (0..12).all(|t| {
        let next = if dones[t] { 0.0 } else if t + 1 < 12 { values[t + 1] } else { last };
        td[t] == rewards[t] + gamma * next - values[t]
    });
    let (mc, _) = gae(&rewards, &[0.0; 12], &dones, 0.0, gamma, 1.0);
    let mut running = 0.0;
    let mut mc_ok = true;
    for t in (0..12).rev() {
        if dones[t] {
            running = 0.0;
        }
        running = rewards[t] + gamma * running;
        mc_ok &= mc[t] == running;
    }
    (
        worst <= 1e-4 && td_ok && mc_ok,
        format!("max gradient error {worst:.1e} over 50 instances, GAE lambda=0 {td_ok}, lambda=1 {mc_ok}"),
    )
}

fn kriging() -> Outcome {
    let model = KrigingModel::for_wells(&EnvironmentConfig::case2()).unwrap();
    let worst = model
        .locations()
        .iter()
        .map(|&x| {
            let (m, v) = model.posterior(x);
            (m - WELL_LOG_PERMEABILITY).abs().max(v.abs())
        })
        .fold(0.0, f64::max);

    let (variance, obs) = (25.0, 1.7);
    let single = KrigingModel::new(vec![(100.0, 300.0)], vec![obs], variance, (310.0, 31.0), PI / 8.0).unwrap();
    let mut closed = 0.0f64;
    for x in [(100.0, 300.0), (150.0, 320.0), (0.0, 0.0), (290.0, 900.0)] {
        let rho = single.correlation((100.0, 300.0), x);
        let (m, v) = single.posterior(x);
        // One observation: the mean is the datum and the variance is 2 sigma^2 (1 - rho).
        closed = closed.max((m - obs).abs()).max((v - 2.0 * variance * (1.0 - rho)).abs());
    }
    (
        model.len() == 21 && worst <= 1e-8 && closed <= 1e-8,
        format!("{} wells, max deviation {worst:.1e}; single-observation error {closed:.1e}", model.len()),
    )
}

fn convergence() -> Outcome {
    let n = ConvergenceWindow::Finite;
    let cases = [
        (vec![1.0, 1.0, 1.0, 1.0], n(3), 0.2, true),
        (vec![1.0, 1.0], n(3), 0.2, false),
        (vec![1.0, 1.0, 1.0], n(3), 0.2, true),
        (vec![], n(1), 0.2, false),
        (vec![1.0, 1.3, 1.0], n(2), 0.2, false),
        (vec![1.0, 1.3, 1.0], n(1), 0.24, true),
        (vec![1.0, 1.3, 1.0], n(1), 0.23, false),
        (vec![2.0, 2.1, 2.1], n(2), 0.051, true),
        (vec![2.0, 2.1, 2.1], n(2), 0.05, false),
        (vec![0.0, 1e-9, 1e-9], n(2), 0.2, true),
        (vec![0.0, 3e-9, 3e-9], n(2), 0.2, false),
        (vec![1.0; 40], ConvergenceWindow::Infinite, 1.0, false),
    ];
    let table_ok = cases
        .iter()
        .all(|(r, w, d, want)| is_converged(r, *w, *d, DEFAULT_GUARD) == *want);

    let config = EnvironmentConfig::case1_on(9);
    let samples = mgrl::uncertainty::sample_fields(&config, 3, 4).unwrap();
    let ppo = PpoConfig {
        actors: 2,
        steps: 10,
        minibatch: 10,
        epochs: 2,
        hidden: vec![8],
        ..PpoConfig::desk()
    };
    let profile = RuntimeProfile {
        betas: vec![0.25, 0.5, 1.0],
        seconds: vec![0.1, 0.3, 1.0],
    };
    let betas = vec![0.25, 0.5, 1.0];
    let limits = vec![12, 24, 32];
    let mut infinite = FidelitySchedule::adaptive(betas.clone(), limits.clone(), 1, 1.0);
    infinite.window = ConvergenceWindow::Infinite;
    let train = |s: &FidelitySchedule| {
        let agent = PpoAgent::new(config.observation_len(), config.action_len(), &ppo, 3).unwrap();
        run_training(s, &ppo, &config, &samples, agent, profile.clone(), 3, |_| Ok(())).unwrap()
    };
    let fixed = train(&FidelitySchedule::fixed(betas, limits));
    let adaptive = train(&infinite);
    let switches_ok = fixed.switch_iterations() == adaptive.switch_iterations()
        && fixed.episodes_per_fidelity == vec![12, 12, 8]
        && fixed.returns_csv() == adaptive.returns_csv();
    (
        table_ok && switches_ok,
        format!(
            "{} hand cases {table_ok}; n=inf switches {:?} vs fixed {:?}",
            cases.len(),
            adaptive.switch_iterations(),
            fixed.switch_iterations()
        ),
    )
}

fn run(config: ExperimentConfig) -> ExperimentSummary {
    run_experiment(&config.resolve().unwrap()).unwrap()
}

fn learning(library_dir: &Path, profile: &RuntimeProfile, out: &Path) -> (Outcome, ExperimentConfig) {
    let mut lines = Vec::new();
    let mut passed = 0;
    let mut first = None;
    for seed in 1..=3u64 {
        let base = |framework, name: &str| {
            let mut c = ExperimentConfig::new(TestCase::One, framework);
            c.seed = seed;
            c.desk_scale = true;
            c.library.path = Some(library_dir.to_path_buf());
            c.runtime_profile = Some(profile.clone());
            c.output = Some(out.join(format!("{name}-seed{seed}")));
            c
        };
        let adaptive_cfg = base(Framework::AdaptiveMultigrid, "adaptive");
        first.get_or_insert_with(|| adaptive_cfg.clone());
        let adaptive = run(adaptive_cfg);
        let single = run(base(Framework::SingleGrid, "single"));

        let eval = adaptive.evaluation.as_ref().unwrap();
        let gain = eval.mean_recovery() / eval.mean_base_recovery() - 1.0;
        let target = single.history.last().unwrap().value - 0.01;
        let reached = adaptive
            .history
            .iter()
            .find(|r| r.beta == 1.0 && r.value >= target)
            .map(|r| r.equivalent_episodes);
        let cheaper = reached.is_some_and(|e| e < single.equivalent_episodes);
        let ok = gain >= 0.05 && cheaper;
        passed += ok as usize;
        lines.push(format!(
            "seed {seed}: gain {:+.1}%, target {target:.4} reached at {} vs {:.0} equivalent episodes{}",
            100.0 * gain,
            reached.map_or("never".into(), |e| format!("{e:.0}")),
            single.equivalent_episodes,
            if ok { "" } else { " (fail)" }
        ));
    }
    ((passed >= 2, lines.join("; ")), first.unwrap())
}

fn de_directionality(library: &SampleLibrary) -> Outcome {
    let config = EnvironmentConfig::case1_on(29);
    let mut lines = Vec::new();
    let mut ok = true;
    for &id in library.evaluation_ids().iter().take(3) {
        let out = de_wellcontrol(&library.fields()[id], &config, &DeConfig::desk()).unwrap();
        ok &= out.best_recovery >= out.base_recovery + 0.02;
        lines.push(format!("sample {id}: {:.4} vs base {:.4}", out.best_recovery, out.base_recovery));
    }
    (ok, lines.join(", "))
}

fn determinism(first: &ExperimentConfig, out: &Path) -> Outcome {
    let original = first.output.clone().unwrap();
    let mut again = ExperimentConfig::load(&original.join(MANIFEST_FILE)).unwrap();
    again.output = Some(out.join("rerun"));
    run(again);
    let a = std::fs::read(original.join("returns.csv")).unwrap();
    let b = std::fs::read(out.join("rerun/returns.csv")).unwrap();
    (a == b, format!("returns.csv rerun from manifest identical: {} ({} bytes)", a == b, a.len()))
}

fn report(index: usize, name: &str, start: Instant, (pass, detail): Outcome) -> bool {
    println!(
        "criterion {index} {}: {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    pass
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "operator suite", t, operators());
    let t = Instant::now();
    all &= report(2, "simulator conservation", t, conservation());
    let t = Instant::now();
    all &= report(3, "PPO numerics", t, ppo_numerics());
    let t = Instant::now();
    all &= report(4, "kriging oracle", t, kriging());
    let t = Instant::now();
    all &= report(5, "convergence logic", t, convergence());

    let t = Instant::now();
    let config = EnvironmentConfig::case1_on(29);
    let library = build_sample_library(&config, 100, 8, 1).unwrap();
    let library_dir = dir.path().join("library");
    library.save(&library_dir).unwrap();
    let profile = RuntimeProfile::measure(&config, &library.training_fields(), &[0.25, 0.5, 1.0], 100).unwrap();
    let (outcome, first) = learning(&library_dir, &profile, dir.path());
    all &= report(6, "desk-scale learning", t, outcome);

    let t = Instant::now();
    all &= report(7, "DE directionality", t, de_directionality(&library));
    let t = Instant::now();
    all &= report(8, "determinism", t, determinism(&first, dir.path()));

    if !all {
        std::process::exit(1);
    }
}
