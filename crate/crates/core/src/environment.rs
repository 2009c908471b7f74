//! Well-control MDP over the flow simulator at any grid fidelity.
//!
//! The agent always works on the fine grid: observations are sampled at
//! fine well cells and actions carry one weight per fine well. Internally
//! the environment simulates on the grid coarsened by `beta`: fine
//! actions are turned into a fine flow-control field and summed onto the
//! coarse grid, and coarse saturation and pressure are prolonged back
//! before sampling. At `beta = 1` both transfers are the identity.
//!
//! An observation is `[producer saturations, producer pressures,
//! injector pressures]`. Injector saturations are omitted since they are
//! always one.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Aggregation, CartesianGrid, FieldRole, PartitionMap, ScalarField};
use crate::simulator::{self, ReservoirModel, ReservoirState, WellSet};

pub const MIN_WEIGHT: f64 = 0.001;
pub const MAX_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TestCase {
    /// Channelized permeability, injectors on the left edge and producers on the right.
    One,
    /// Smooth kriged permeability, injectors on the central axis and producers on both edges.
    Two,
}

impl TryFrom<u8> for TestCase {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(TestCase::One),
            2 => Ok(TestCase::Two),
            other => Err(format!("test case must be 1 or 2, got {other}")),
        }
    }
}

impl From<TestCase> for u8 {
    fn from(c: TestCase) -> u8 {
        match c {
            TestCase::One => 1,
            TestCase::Two => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub case: TestCase,
    pub beta: f64,
    pub control_steps: usize,
    /// Episode length `t_M - t_0` in days.
    pub horizon_days: f64,
    pub fine_nx: usize,
    pub fine_ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Fine-grid injector cells.
    pub injectors: Vec<usize>,
    /// Fine-grid producer cells.
    pub producers: Vec<usize>,
    /// Total injection rate `c` in ft²/day.
    pub total_rate: f64,
    pub porosity: f64,
    pub viscosity: f64,
    pub initial_saturation: f64,
}

/// Every other cell of the left (injectors) and right (producers) columns.
fn edge_wells(nx: usize, ny: usize) -> (Vec<usize>, Vec<usize>) {
    let rows: Vec<usize> = (0..ny).step_by(2).collect();
    let inj = rows.iter().map(|j| j * nx).collect();
    let prod = rows.iter().map(|j| j * nx + nx - 1).collect();
    (inj, prod)
}

/// Seven rows spread evenly; injectors on the central column, producers
/// on the left then the right edge.
fn axis_wells(nx: usize, ny: usize) -> (Vec<usize>, Vec<usize>) {
    let rows: Vec<usize> = (0..7).map(|k| (2 * k + 1) * ny / 14).collect();
    let inj = rows.iter().map(|j| j * nx + nx / 2).collect();
    let prod = rows
        .iter()
        .map(|j| j * nx)
        .chain(rows.iter().map(|j| j * nx + nx - 1))
        .collect();
    (inj, prod)
}

impl EnvironmentConfig {
    /// Test case 1 on its 61x61 reference grid.
    pub fn case1() -> Self {
        Self::case1_on(61)
    }

    /// Test case 1 on an `n x n` fine grid with wells on every other edge cell.
    pub fn case1_on(n: usize) -> Self {
        let (injectors, producers) = edge_wells(n, n);
        Self {
            case: TestCase::One,
            beta: 1.0,
            control_steps: 5,
            horizon_days: 125.0,
            fine_nx: n,
            fine_ny: n,
            lx: 1200.0,
            ly: 1200.0,
            injectors,
            producers,
            total_rate: 2304.0,
            porosity: 0.2,
            viscosity: 0.3,
            initial_saturation: 0.0,
        }
    }

    /// Test case 2 on its 31x91 reference grid.
    pub fn case2() -> Self {
        Self::case2_on(31, 91)
    }

    pub fn case2_on(nx: usize, ny: usize) -> Self {
        let (injectors, producers) = axis_wells(nx, ny);
        Self {
            case: TestCase::Two,
            beta: 1.0,
            control_steps: 5,
            horizon_days: 25.0,
            fine_nx: nx,
            fine_ny: ny,
            lx: 620.0,
            ly: 1820.0,
            injectors,
            producers,
            total_rate: 9072.0,
            porosity: 0.2,
            viscosity: 0.3,
            initial_saturation: 0.0,
        }
    }

    pub fn for_case(case: TestCase) -> Self {
        match case {
            TestCase::One => Self::case1(),
            TestCase::Two => Self::case2(),
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }

    pub fn fine_grid(&self) -> Result<CartesianGrid> {
        CartesianGrid::new(self.fine_nx, self.fine_ny, self.lx, self.ly)
    }

    pub fn n_injectors(&self) -> usize {
        self.injectors.len()
    }

    pub fn n_producers(&self) -> usize {
        self.producers.len()
    }

    pub fn observation_len(&self) -> usize {
        2 * self.producers.len() + self.injectors.len()
    }

    pub fn action_len(&self) -> usize {
        self.injectors.len() + self.producers.len()
    }

    pub fn step_duration(&self) -> f64 {
        self.horizon_days / self.control_steps as f64
    }

    pub fn pore_volume(&self) -> f64 {
        self.porosity * self.lx * self.ly
    }

    pub fn fine_wells(&self) -> Result<WellSet> {
        WellSet::new(
            self.injectors.clone(),
            self.producers.clone(),
            self.total_rate,
            &self.fine_grid()?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_steps == 0 {
            return Err(Error::Contract("an episode needs at least one control step".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidFidelity(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.horizon_days >= 0.0) {
            return Err(Error::Contract(format!("negative horizon {}", self.horizon_days)));
        }
        if !(0.0..=1.0).contains(&self.initial_saturation) {
            return Err(Error::Domain(format!("initial saturation {}", self.initial_saturation)));
        }
        self.fine_wells().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-well flow weights, injectors first, always within `[MIN_WEIGHT, MAX_WEIGHT]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionWeights(Vec<f64>);

impl ActionWeights {
    /// Clip raw values into the admissible weight range. NaN maps to the lower bound.
    pub fn clipped(raw: &[f64]) -> Self {
        Self(
            raw.iter()
                .map(|v| if v.is_nan() { MIN_WEIGHT } else { v.clamp(MIN_WEIGHT, MAX_WEIGHT) })
                .collect(),
        )
    }

    pub fn equal(n: usize) -> Self {
        Self(vec![MAX_WEIGHT; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-well rates: injector `j` gets `c w_j / sum(w_inj)`, producer `j`
/// gets `-c w_j / sum(w_prod)`.
pub fn action_to_flows(w: &ActionWeights, n_injectors: usize, total_rate: f64) -> Vec<f64> {
    let (inj, prod) = w.as_slice().split_at(n_injectors);
    let si: f64 = inj.iter().sum();
    let sp: f64 = prod.iter().sum();
    inj.iter()
        .map(|wi| total_rate * wi / si)
        .chain(prod.iter().map(|wp| -total_rate * wp / sp))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    /// Recovery-factor increment of this control step.
    pub reward: f64,
    pub done: bool,
    /// Cumulative recovery factor so far.
    pub recovery: f64,
}

/// Environment for one fidelity factor. Owns its state; not shared across threads.
#[derive(Debug, Clone)]
pub struct MultiGridEnv {
    config: EnvironmentConfig,
    fine_grid: CartesianGrid,
    partition: PartitionMap,
    fine_wells: WellSet,
    coarse_wells: WellSet,
    model: Option<ReservoirModel>,
    state: Option<ReservoirState>,
    steps_taken: usize,
    recovery: f64,
    last_flows: Vec<f64>,
}

fn unique_in_order(cells: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for c in cells {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

impl MultiGridEnv {
    pub fn new(config: EnvironmentConfig) -> Result<Self> {
        config.validate()?;
        let fine_grid = config.fine_grid()?;
        let partition = grid::build_partition(config.fine_nx, config.fine_ny, config.beta)?;
        let coarse_grid = partition.coarse_grid(&fine_grid)?;
        let fine_wells = config.fine_wells()?;
        let inj = unique_in_order(fine_wells.injectors().iter().map(|&c| partition.owner(c)));
        let prod = unique_in_order(fine_wells.producers().iter().map(|&c| partition.owner(c)));
        if inj.iter().any(|c| prod.contains(c)) {
            return Err(Error::InvalidFidelity(format!(
                "beta {} merges an injector and a producer into one {coarse_grid} cell",
                config.beta
            )));
        }
        let coarse_wells = WellSet::new(inj, prod, config.total_rate, &coarse_grid)
            .map_err(|e| Error::InvalidFidelity(e.to_string()))?;
        let last_flows = fine_wells.equal_flows();
        Ok(Self {
            config,
            fine_grid,
            partition,
            fine_wells,
            coarse_wells,
            model: None,
            state: None,
            steps_taken: 0,
            recovery: 0.0,
            last_flows,
        })
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn fine_grid(&self) -> &CartesianGrid {
        &self.fine_grid
    }

    /// Grid the simulator actually runs on.
    pub fn internal_grid(&self) -> CartesianGrid {
        let (nx, ny) = self.partition.coarse_dims();
        CartesianGrid::new(nx, ny, self.config.lx, self.config.ly).expect("partition dims are positive")
    }

    pub fn partition(&self) -> &PartitionMap {
        &self.partition
    }

    pub fn fine_wells(&self) -> &WellSet {
        &self.fine_wells
    }

    pub fn model(&self) -> Option<&ReservoirModel> {
        self.model.as_ref()
    }

    pub fn state(&self) -> Option<&ReservoirState> {
        self.state.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn recovery(&self) -> f64 {
        self.recovery
    }

    pub fn is_done(&self) -> bool {
        self.steps_taken >= self.config.control_steps
    }

    /// Rates applied during the most recent step (equal weights after reset).
    pub fn last_flows(&self) -> &[f64] {
        &self.last_flows
    }

    /// Coarse source field for fine per-well rates.
    fn coarse_source(&self, flows: &[f64]) -> Result<ScalarField> {
        let fine = self.fine_wells.source_field(&self.fine_grid, flows)?;
        grid::restrict(&fine, &self.partition, Aggregation::Sum)
    }

    /// Start an episode on the given fine-grid permeability sample
    /// (log-permeability or permeability).
    pub fn reset(&mut self, permeability: &ScalarField) -> Result<Observation> {
        if (permeability.grid().nx(), permeability.grid().ny()) != (self.fine_grid.nx(), self.fine_grid.ny()) {
            return Err(Error::Contract(format!(
                "permeability grid {} differs from fine grid {}",
                permeability.grid(),
                self.fine_grid
            )));
        }
        let k_fine = match permeability.role() {
            FieldRole::LogPermeability => permeability.exp_permeability()?,
            FieldRole::Permeability => permeability.clone(),
            other => return Err(Error::Contract(format!("expected permeability, got {other:?}"))),
        };
        let k = grid::restrict(&k_fine, &self.partition, Aggregation::HarmonicMean)?;
        let phi_fine = ScalarField::constant(self.fine_grid, self.config.porosity, FieldRole::Porosity)?;
        let phi = grid::restrict(&phi_fine, &self.partition, Aggregation::Mean)?;
        let model = ReservoirModel::new(k, phi, self.config.viscosity, self.coarse_wells.clone())?;

        let mut state = ReservoirState::initial(model.grid(), self.config.initial_saturation)?;
        let flows = self.fine_wells.equal_flows();
        state.pressure = simulator::solve_pressure(&model, &self.coarse_source(&flows)?)?;

        self.model = Some(model);
        self.state = Some(state);
        self.steps_taken = 0;
        self.recovery = 0.0;
        self.last_flows = flows;
        self.observation()
    }

    pub fn step(&mut self, action: &ActionWeights) -> Result<StepResult> {
        let (Some(model), Some(state)) = (self.model.as_ref(), self.state.as_ref()) else {
            return Err(Error::Contract("step called before reset".into()));
        };
        if self.is_done() {
            return Err(Error::Contract("episode already finished; call reset".into()));
        }
        if action.len() != self.config.action_len() {
            return Err(Error::Contract(format!(
                "expected {} action weights, got {}",
                self.config.action_len(),
                action.len()
            )));
        }
        let flows = action_to_flows(action, self.config.n_injectors(), self.config.total_rate);
        let source = self.coarse_source(&flows)?;
        let (next, integral) =
            simulator::run_control_step_with_source(state, model, &source, self.config.step_duration())?;
        let reward = integral / self.config.pore_volume();
        self.state = Some(next);
        self.steps_taken += 1;
        self.recovery += reward;
        self.last_flows = flows;
        Ok(StepResult {
            observation: self.observation()?,
            reward,
            done: self.is_done(),
            recovery: self.recovery,
        })
    }

    pub fn fine_saturation(&self) -> Result<ScalarField> {
        let state = self.state.as_ref().ok_or_else(|| Error::Contract("environment not reset".into()))?;
        grid::prolong(&state.saturation, &self.partition, &self.fine_grid)
    }

    pub fn fine_pressure(&self) -> Result<ScalarField> {
        let state = self.state.as_ref().ok_or_else(|| Error::Contract("environment not reset".into()))?;
        grid::prolong(&state.pressure, &self.partition, &self.fine_grid)
    }

    pub fn observation(&self) -> Result<Observation> {
        let s = self.fine_saturation()?;
        let p = self.fine_pressure()?;
        let (s, p) = (s.values(), p.values());
        let prod = self.fine_wells.producers();
        let inj = self.fine_wells.injectors();
        let mut obs = Vec::with_capacity(self.config.observation_len());
        obs.extend(prod.iter().map(|&c| s[c]));
        obs.extend(prod.iter().map(|&c| p[c]));
        obs.extend(inj.iter().map(|&c| p[c]));
        Ok(Observation(obs))
    }
}

/// All wells equally open, regardless of the observation.
pub fn base_policy(config: &EnvironmentConfig) -> impl Fn(&Observation) -> ActionWeights {
    let n = config.action_len();
    move |_| ActionWeights::equal(n)
}

/// Cumulative recovery factor of one episode under `policy`.
pub fn episode_return<P>(env: &mut MultiGridEnv, permeability: &ScalarField, mut policy: P) -> Result<f64>
where
    P: FnMut(&Observation) -> ActionWeights,
{
    let mut obs = env.reset(permeability)?;
    loop {
        let out = env.step(&policy(&obs))?;
        if out.done {
            return Ok(out.recovery);
        }
        obs = out.observation;
    }
}

/// Recovery factor of a fixed control sequence, one action per step.
pub fn open_loop_return(env: &mut MultiGridEnv, permeability: &ScalarField, actions: &[ActionWeights]) -> Result<f64> {
    if actions.len() != env.config().control_steps {
        return Err(Error::Contract(format!(
            "expected {} actions, got {}",
            env.config().control_steps,
            actions.len()
        )));
    }
    let mut step = 0;
    episode_return(env, permeability, |_| {
        let a = actions[step].clone();
        step += 1;
        a
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub well: usize,
    pub rate: f64,
    pub saturation: f64,
    pub pressure: f64,
    pub reward: f64,
}

/// Per-step, per-well record of an episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
    pub recovery: f64,
}

impl EpisodeTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,well,rate,saturation,pressure,reward\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.well, r.rate, r.saturation, r.pressure, r.reward
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Rates per step, wells in action order.
    pub fn controls(&self) -> Vec<Vec<f64>> {
        let mut steps: Vec<Vec<f64>> = Vec::new();
        for r in &self.rows {
            if steps.len() < r.step {
                steps.push(Vec::new());
            }
            steps[r.step - 1].push(r.rate);
        }
        steps
    }
}

/// Run an episode and record rates, well saturations and pressures after each step.
pub fn trace_episode<P>(env: &mut MultiGridEnv, permeability: &ScalarField, mut policy: P) -> Result<EpisodeTrace>
where
    P: FnMut(&Observation) -> ActionWeights,
{
    let mut obs = env.reset(permeability)?;
    let mut trace = EpisodeTrace::default();
    loop {
        let out = env.step(&policy(&obs))?;
        let s = env.fine_saturation()?;
        let p = env.fine_pressure()?;
        for (well, (cell, rate)) in env.fine_wells().cells().zip(env.last_flows()).enumerate() {
            trace.rows.push(TraceRow {
                step: env.steps_taken(),
                well,
                rate: *rate,
                saturation: s.values()[cell],
                pressure: p.values()[cell],
                reward: out.reward,
            });
        }
        trace.recovery = out.recovery;
        if out.done {
            return Ok(trace);
        }
        obs = out.observation;
    }
}
