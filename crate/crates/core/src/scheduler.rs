//! Multi-fidelity training loop and convergence detection.
//!
//! Training walks through an increasing list of grid fidelities. At each
//! one it alternates rollouts and PPO updates, records the deterministic
//! policy return on the training samples after every update and moves on
//! once the returns have flattened out or the cumulative episode limit of
//! that fidelity is reached. The policy carries over unchanged; the
//! convergence window starts afresh at every fidelity.
//!
//! Cost is reported in equivalent fine-grid episodes: each episode is
//! weighted by the measured runtime of its fidelity relative to `beta = 1`.

use std::fmt::{self, Write as _};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::environment::{base_policy, episode_return, EnvironmentConfig, MultiGridEnv};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::rl_ppo::{evaluate_policy_return, PpoAgent, PpoConfig};

pub const DEFAULT_GUARD: f64 = 1e-8;

/// Number of trailing policy iterations checked for convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub enum ConvergenceWindow {
    Finite(usize),
    /// Never converge; only episode limits end a fidelity.
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WindowRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<WindowRepr> for ConvergenceWindow {
    type Error = String;

    fn try_from(r: WindowRepr) -> std::result::Result<Self, String> {
        match r {
            WindowRepr::Count(n) => Ok(Self::Finite(n)),
            WindowRepr::Word(w) if matches!(w.as_str(), "inf" | "infinite" | "∞") => Ok(Self::Infinite),
            WindowRepr::Word(w) => Err(format!("window must be an integer or \"inf\", got {w:?}")),
        }
    }
}

impl From<ConvergenceWindow> for WindowRepr {
    fn from(w: ConvergenceWindow) -> Self {
        match w {
            ConvergenceWindow::Finite(n) => WindowRepr::Count(n),
            ConvergenceWindow::Infinite => WindowRepr::Word("inf".into()),
        }
    }
}

impl fmt::Display for ConvergenceWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(n) => write!(f, "{n}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

/// Whether the last `window` relative return changes all stay below `tolerance`.
///
/// Each change is `|r_i - r_{i-1}| / max(r_{i-1}, guard)`. When the
/// history is exactly `window` long the oldest entry has no predecessor,
/// so one change fewer is checked; with no change available at all the
/// answer is `false`.
pub fn is_converged(returns: &[f64], window: ConvergenceWindow, tolerance: f64, guard: f64) -> bool {
    let ConvergenceWindow::Finite(n) = window else {
        return false;
    };
    if returns.len() < n {
        return false;
    }
    let changes = n.min(returns.len().saturating_sub(1));
    if changes == 0 {
        return false;
    }
    let start = returns.len() - changes;
    (start..returns.len())
        .map(|i| ((returns[i] - returns[i - 1]) / returns[i - 1].max(guard)).abs())
        .fold(0.0, f64::max)
        < tolerance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySchedule {
    pub betas: Vec<f64>,
    /// Cumulative episode limit per fidelity.
    pub episode_limits: Vec<u64>,
    pub window: ConvergenceWindow,
    pub tolerance: f64,
    #[serde(default = "default_guard")]
    pub guard: f64,
}

fn default_guard() -> f64 {
    DEFAULT_GUARD
}

impl FidelitySchedule {
    pub fn single_grid(beta: f64, episodes: u64) -> Self {
        Self {
            betas: vec![beta],
            episode_limits: vec![episodes],
            window: ConvergenceWindow::Infinite,
            tolerance: 0.0,
            guard: DEFAULT_GUARD,
        }
    }

    pub fn fixed(betas: Vec<f64>, episode_limits: Vec<u64>) -> Self {
        Self {
            betas,
            episode_limits,
            window: ConvergenceWindow::Infinite,
            tolerance: 0.0,
            guard: DEFAULT_GUARD,
        }
    }

    pub fn adaptive(betas: Vec<f64>, episode_limits: Vec<u64>, window: usize, tolerance: f64) -> Self {
        Self {
            window: ConvergenceWindow::Finite(window),
            tolerance,
            ..Self::fixed(betas, episode_limits)
        }
    }

    pub fn total_episodes(&self) -> u64 {
        self.episode_limits.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.betas.len() != self.episode_limits.len() {
            return Err(Error::config(
                "schedule.betas",
                "needs one episode limit per fidelity and at least one fidelity",
            ));
        }
        if self.betas.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return Err(Error::config("schedule.betas", "every fidelity must lie in (0, 1]"));
        }
        if self.betas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("schedule.betas", "fidelities must be strictly increasing"));
        }
        if self.episode_limits[0] == 0 || self.episode_limits.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "schedule.episode_limits",
                "limits must be positive and strictly increasing",
            ));
        }
        if self.window == ConvergenceWindow::Finite(0) {
            return Err(Error::config("schedule.window", "must be at least 1 or \"inf\""));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("schedule.tolerance", "must be nonnegative"));
        }
        if !(self.guard > 0.0) {
            return Err(Error::config("schedule.guard", "must be positive"));
        }
        Ok(())
    }
}

/// Mean seconds per base-policy episode at each fidelity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RuntimeProfile {
    pub betas: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl RuntimeProfile {
    /// Time `episodes` base-policy episodes per fidelity, cycling through `samples`.
    /// `beta = 1` is always included.
    pub fn measure(config: &EnvironmentConfig, samples: &[ScalarField], betas: &[f64], episodes: usize) -> Result<Self> {
        if samples.is_empty() || episodes == 0 {
            return Err(Error::Contract("runtime measurement needs samples and episodes".into()));
        }
        let mut all: Vec<f64> = betas.to_vec();
        if !all.contains(&1.0) {
            all.push(1.0);
        }
        all.sort_by(f64::total_cmp);
        let mut seconds = Vec::with_capacity(all.len());
        for &beta in &all {
            let cfg = config.with_beta(beta);
            let mut env = MultiGridEnv::new(cfg.clone())?;
            let policy = base_policy(&cfg);
            let start = Instant::now();
            for e in 0..episodes {
                episode_return(&mut env, &samples[e % samples.len()], &policy)?;
            }
            seconds.push(start.elapsed().as_secs_f64() / episodes as f64);
        }
        Ok(Self { betas: all, seconds })
    }

    /// Runtime at `beta` relative to `beta = 1`.
    pub fn ratio(&self, beta: f64) -> Result<f64> {
        let find = |b: f64| self.betas.iter().position(|x| *x == b).map(|i| self.seconds[i]);
        let fine = find(1.0)
            .filter(|s| *s > 0.0)
            .ok_or_else(|| Error::Contract("no positive runtime measured at beta = 1".into()))?;
        let here = find(beta).ok_or_else(|| Error::Contract(format!("no runtime measured at beta = {beta}")))?;
        Ok(here / fine)
    }
}

/// Episodes weighted by their runtime relative to the finest grid.
pub fn equivalent_fine_episodes(counts: &[u64], betas: &[f64], profile: &RuntimeProfile) -> Result<f64> {
    if counts.len() != betas.len() {
        return Err(Error::Contract("one episode count per fidelity expected".into()));
    }
    let mut total = 0.0;
    for (&c, &b) in counts.iter().zip(betas) {
        total += c as f64 * profile.ratio(b)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnRecord {
    pub iteration: usize,
    pub beta: f64,
    /// Cumulative training episodes after this iteration.
    pub episodes: u64,
    pub equivalent_episodes: f64,
    /// Deterministic policy return on the training samples.
    pub value: f64,
    /// Mean return of the stochastic rollout episodes.
    pub rollout_return: f64,
}

#[derive(Debug)]
pub struct TrainingReport {
    pub agent: PpoAgent,
    pub history: Vec<ReturnRecord>,
    pub betas: Vec<f64>,
    pub episodes_per_fidelity: Vec<u64>,
    pub equivalent_episodes: f64,
    pub profile: RuntimeProfile,
    /// Set when an iteration failed; the report covers everything before it.
    pub failure: Option<Error>,
}

impl TrainingReport {
    pub fn total_episodes(&self) -> u64 {
        self.episodes_per_fidelity.iter().sum()
    }

    pub fn final_return(&self) -> Option<f64> {
        self.history.last().map(|r| r.value)
    }

    /// Index of the first iteration recorded at each fidelity that was reached.
    pub fn switch_iterations(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut last = None;
        for r in &self.history {
            if last != Some(r.beta) {
                out.push(r.iteration);
                last = Some(r.beta);
            }
        }
        out
    }

    pub fn returns_csv(&self) -> String {
        let mut out = String::from("iteration,beta,episodes,equivalent_episodes,return\n");
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.beta, r.episodes, r.equivalent_episodes, r.value
            );
        }
        out
    }
}

/// Progress notifications from [`run_training`].
pub enum TrainingEvent<'a> {
    Iteration(&'a ReturnRecord),
    /// Training at fidelity `index` has ended; `agent` is the policy handed to the next one.
    FidelityDone { index: usize, beta: f64, agent: &'a PpoAgent },
}

/// Episodes gathered per policy iteration.
pub fn episodes_per_iteration(ppo: &PpoConfig, env: &EnvironmentConfig) -> Result<u64> {
    let steps = ppo.actors * ppo.steps;
    if !ppo.steps.is_multiple_of(env.control_steps) {
        return Err(Error::config(
            "ppo.steps",
            format!("must be a multiple of the {} control steps per episode", env.control_steps),
        ));
    }
    Ok((steps / env.control_steps) as u64)
}

/// Train `agent` through the schedule on the given training samples.
///
/// Errors are returned for invalid inputs only; a failure during training
/// ends the run and is reported in [`TrainingReport::failure`].
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    schedule: &FidelitySchedule,
    ppo: &PpoConfig,
    env_config: &EnvironmentConfig,
    samples: &[ScalarField],
    mut agent: PpoAgent,
    profile: RuntimeProfile,
    seed: u64,
    mut observer: impl FnMut(TrainingEvent<'_>) -> Result<()>,
) -> Result<TrainingReport> {
    schedule.validate()?;
    ppo.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("no training samples".into()));
    }
    let per_iteration = episodes_per_iteration(ppo, env_config)?;
    for &b in &schedule.betas {
        profile.ratio(b)?;
        MultiGridEnv::new(env_config.with_beta(b))?;
    }

    let mut report = TrainingReport {
        agent: agent.clone(),
        history: Vec::new(),
        betas: schedule.betas.clone(),
        episodes_per_fidelity: vec![0; schedule.betas.len()],
        equivalent_episodes: 0.0,
        profile,
        failure: None,
    };
    let mut episodes = agent.episodes;
    let mut iteration = 0usize;

    'fidelities: for (i, (&beta, &limit)) in schedule.betas.iter().zip(&schedule.episode_limits).enumerate() {
        let env = env_config.with_beta(beta);
        let ratio = report.profile.ratio(beta)?;
        let mut returns: Vec<f64> = Vec::new();
        loop {
            let step = (|| -> Result<(f64, f64)> {
                let batch = agent.collect_rollouts(&env, samples, ppo, seed, iteration as u64)?;
                agent.observe(&batch);
                agent.update(&batch, ppo, seed, iteration as u64)?;
                Ok((evaluate_policy_return(&agent, &env, samples)?, batch.mean_episode_return))
            })();
            let (value, rollout_return) = match step {
                Ok(v) => v,
                Err(e) => {
                    report.failure = Some(e);
                    break 'fidelities;
                }
            };
            episodes += per_iteration;
            agent.episodes = episodes;
            report.episodes_per_fidelity[i] += per_iteration;
            report.equivalent_episodes += per_iteration as f64 * ratio;
            returns.push(value);
            report.history.push(ReturnRecord {
                iteration,
                beta,
                episodes,
                equivalent_episodes: report.equivalent_episodes,
                value,
                rollout_return,
            });
            iteration += 1;
            if let Err(e) = observer(TrainingEvent::Iteration(report.history.last().expect("just pushed"))) {
                report.failure = Some(e);
                break 'fidelities;
            }
            if is_converged(&returns, schedule.window, schedule.tolerance, schedule.guard) || episodes >= limit {
                break;
            }
        }
        // Inputs seen by the policy stay on one scale once it moves between grids.
        if i + 1 < schedule.betas.len() {
            agent.normalizer.frozen = true;
        }
        if let Err(e) = observer(TrainingEvent::FidelityDone { index: i, beta, agent: &agent }) {
            report.failure = Some(e);
            break;
        }
    }
    report.agent = agent;
    Ok(report)
}
