mod common;

use mgrl::environment::{ActionWeights, EnvironmentConfig, MultiGridEnv, MAX_WEIGHT, MIN_WEIGHT};
use mgrl::grid::{build_partition, prolong, restrict_by_role, CartesianGrid, FieldRole, ScalarField};
use mgrl::rl_ppo::{PpoAgent, PpoConfig};
use mgrl::scheduler::{run_training, ConvergenceWindow, FidelitySchedule, RuntimeProfile};
use mgrl::simulator::{run_control_step, ReservoirModel, ReservoirState};
use mgrl::uncertainty::sample_g1;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> impl Strategy<Value = (usize, usize, f64)> {
    (1usize..40, 1usize..40, 0.05f64..=1.0).prop_filter("coarse grid must be nonempty", |(m, n, b)| {
        (b * *m as f64).floor() >= 1.0 && (b * *n as f64).floor() >= 1.0
    })
}

proptest! {
    #[test]
    fn partition_tiles_the_grid((m, n, beta) in dims()) {
        let map = build_partition(m, n, beta).unwrap();
        let (cx, cy) = map.coarse_dims();
        prop_assert_eq!((cx, cy), ((beta * m as f64).floor() as usize, (beta * n as f64).floor() as usize));
        let sizes = map.block_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), m * n);
        prop_assert!(sizes.iter().all(|&s| s >= 1));
        // Each block is a contiguous rectangle: owner is monotone along both axes.
        for j in 0..n {
            for i in 1..m {
                prop_assert!(map.owner(j * m + i) >= map.owner(j * m + i - 1));
            }
        }
    }

    #[test]
    fn mean_round_trip_is_exact((m, n, beta) in dims(), seed in any::<u64>()) {
        let map = build_partition(m, n, beta).unwrap();
        let fine = CartesianGrid::new(m, n, m as f64, n as f64).unwrap();
        let coarse = map.coarse_grid(&fine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..coarse.cell_count()).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let field = ScalarField::new(coarse, x.clone(), FieldRole::Saturation).unwrap();
        let back = restrict_by_role(&prolong(&field, &map, &fine).unwrap(), &map).unwrap();
        prop_assert_eq!(back.values(), &x[..]);
    }

    #[test]
    fn restriction_conserves_and_bounds((m, n, beta) in dims(), seed in any::<u64>()) {
        let map = build_partition(m, n, beta).unwrap();
        let fine = CartesianGrid::new(m, n, m as f64, n as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..m * n).map(|_| rand::Rng::random_range(&mut rng, 0.01..10.0)).collect();
        let flows = ScalarField::new(fine, v.clone(), FieldRole::FlowControl).unwrap();
        let total: f64 = v.iter().sum();
        prop_assert!((restrict_by_role(&flows, &map).unwrap().sum() - total).abs() <= 1e-12 * total);

        let perm = ScalarField::new(fine, v.clone(), FieldRole::Permeability).unwrap();
        let sat = ScalarField::new(fine, v.iter().map(|x| x / 10.0).collect(), FieldRole::Saturation).unwrap();
        let hk = restrict_by_role(&perm, &map).unwrap();
        let ms = restrict_by_role(&sat, &map).unwrap();
        for c in 0..hk.values().len() {
            let block: Vec<usize> = (0..m * n).filter(|&f| map.owner(f) == c).collect();
            let lo = block.iter().map(|&f| v[f]).fold(f64::INFINITY, f64::min);
            let hi = block.iter().map(|&f| v[f]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(hk.values()[c] >= lo * (1.0 - 1e-12) && hk.values()[c] <= hi * (1.0 + 1e-12));
            prop_assert!((0.0..=1.0).contains(&ms.values()[c]));
        }
    }

    #[test]
    fn clipped_actions_are_admissible(raw in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
        let w = ActionWeights::clipped(&raw);
        prop_assert!(w.as_slice().iter().all(|x| (MIN_WEIGHT..=MAX_WEIGHT).contains(x)));
    }

    #[test]
    fn control_step_conserves_and_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, 6, 5);
        let mut state = ReservoirState::initial(model.grid(), 0.0).unwrap();
        for _ in 0..3 {
            let flows = common::random_flows(&mut rng, &model);
            let (audit, s) = common::audit_step(&model, &state, &flows, 30.0);
            prop_assert!(audit.divergence <= 1e-8, "{:?}", audit);
            prop_assert!(audit.mass_balance <= 1e-8, "{:?}", audit);
            prop_assert!(audit.min_saturation >= 0.0 && audit.max_saturation <= 1.0);
            let (next, _) = run_control_step(&state, &model, &flows, 30.0).unwrap();
            prop_assert_eq!(next.saturation.values(), &s[..]);
            state = next;
        }
    }
}

#[test]
fn full_fidelity_environment_matches_simulator() {
    let config = EnvironmentConfig::case1_on(11);
    let grid = config.fine_grid().unwrap();
    let perm = sample_g1(grid, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut env = MultiGridEnv::new(config.clone()).unwrap();
    env.reset(&perm).unwrap();

    let model = ReservoirModel::new(
        perm.exp_permeability().unwrap_or(perm.clone()),
        ScalarField::constant(grid, config.porosity, FieldRole::Porosity).unwrap(),
        config.viscosity,
        config.fine_wells().unwrap(),
    )
    .unwrap();
    let mut state = ReservoirState::initial(&grid, config.initial_saturation).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..config.control_steps {
        let raw: Vec<f64> = (0..config.action_len()).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let action = ActionWeights::clipped(&raw);
        let out = env.step(&action).unwrap();
        let flows = mgrl::environment::action_to_flows(&action, config.n_injectors(), config.total_rate);
        let (next, integral) = run_control_step(&state, &model, &flows, config.step_duration()).unwrap();
        assert_eq!(out.reward, integral / config.pore_volume());
        assert_eq!(env.state().unwrap().saturation.values(), next.saturation.values());
        assert_eq!(env.state().unwrap().pressure.values(), next.pressure.values());
        state = next;
    }
}

#[test]
fn infinite_window_reproduces_fixed_switches() {
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
        betas: vec![0.5, 1.0],
        seconds: vec![0.25, 1.0],
    };
    let limits = vec![12, 20];
    let fixed = FidelitySchedule::fixed(vec![0.5, 1.0], limits.clone());
    let mut adaptive = FidelitySchedule::adaptive(vec![0.5, 1.0], limits, 1, 1.0);
    adaptive.window = ConvergenceWindow::Infinite;
    let run = |s: &FidelitySchedule| {
        let agent = PpoAgent::new(config.observation_len(), config.action_len(), &ppo, 3).unwrap();
        run_training(s, &ppo, &config, &samples, agent, profile.clone(), 3, |_| Ok(())).unwrap()
    };
    let a = run(&fixed);
    let b = run(&adaptive);
    assert_eq!(a.switch_iterations(), b.switch_iterations());
    assert_eq!(a.returns_csv(), b.returns_csv());
    assert_eq!(a.episodes_per_fidelity, vec![12, 8]);
}
