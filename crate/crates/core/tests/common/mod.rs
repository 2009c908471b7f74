#![allow(dead_code)]

pub mod ppo;

use mgrl::environment::{action_to_flows, ActionWeights};
use mgrl::grid::{CartesianGrid, FieldRole, ScalarField};
use mgrl::simulator::{darcy_velocity, solve_pressure, ReservoirModel, ReservoirState, Transport, WellSet};
use rand::Rng;

/// Random heterogeneous model with wells scattered over distinct cells.
pub fn random_model<R: Rng>(rng: &mut R, nx: usize, ny: usize) -> ReservoirModel {
    let grid = CartesianGrid::new(nx, ny, 10.0 * nx as f64, 10.0 * ny as f64).unwrap();
    let n = grid.cell_count();
    let perm: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..2.5))).collect();
    let poro: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.35)).collect();
    let n_inj = rng.random_range(1..=3);
    let n_prod = rng.random_range(1..=4);
    let mut cells: Vec<usize> = (0..n).collect();
    for i in 0..n_inj + n_prod {
        let j = rng.random_range(i..n);
        cells.swap(i, j);
    }
    let wells = WellSet::new(
        cells[..n_inj].to_vec(),
        cells[n_inj..n_inj + n_prod].to_vec(),
        rng.random_range(100.0..2000.0),
        &grid,
    )
    .unwrap();
    ReservoirModel::new(
        ScalarField::new(grid, perm, FieldRole::Permeability).unwrap(),
        ScalarField::new(grid, poro, FieldRole::Porosity).unwrap(),
        rng.random_range(0.5..2.0),
        wells,
    )
    .unwrap()
}

pub fn random_flows<R: Rng>(rng: &mut R, model: &ReservoirModel) -> Vec<f64> {
    let w = model.wells();
    let raw: Vec<f64> = (0..w.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    action_to_flows(&ActionWeights::clipped(&raw), w.injectors().len(), w.total_rate())
}

/// Worst violations over one control step: relative divergence residual,
/// relative per-sub-step tracer mass balance, and saturation range.
#[derive(Debug, Default, Clone, Copy)]
pub struct StepAudit {
    pub divergence: f64,
    pub mass_balance: f64,
    pub min_saturation: f64,
    pub max_saturation: f64,
}

pub fn audit_step(model: &ReservoirModel, state: &ReservoirState, flows: &[f64], duration: f64) -> (StepAudit, Vec<f64>) {
    let source = model.wells().source_field(model.grid(), flows).unwrap();
    let pressure = solve_pressure(model, &source).unwrap();
    let v = darcy_velocity(model, &pressure).unwrap();
    let scale = model.wells().total_rate();
    let divergence = v
        .divergence()
        .iter()
        .zip(source.values())
        .map(|(d, q)| (d - q).abs())
        .fold(0.0, f64::max)
        / scale;

    let transport = Transport::new(model, &v, &source).unwrap();
    let (n, h) = transport.substeps(duration);
    let mut s = state.saturation.values().to_vec();
    let mut audit = StepAudit {
        divergence,
        min_saturation: f64::INFINITY,
        max_saturation: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..n {
        let before = transport.tracer_mass(&s);
        let expected = h * transport.tracer_net_rate(&s);
        transport.substep(&mut s, h).unwrap();
        let after = transport.tracer_mass(&s);
        let err = (after - before - expected).abs() / (before.abs() + h * scale).max(f64::MIN_POSITIVE);
        audit.mass_balance = audit.mass_balance.max(err);
        for &x in &s {
            audit.min_saturation = audit.min_saturation.min(x);
            audit.max_saturation = audit.max_saturation.max(x);
        }
    }
    (audit, s)
}
