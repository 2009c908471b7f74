//! Differential evolution as a per-sample reference optimizer.
//!
//! DE searches open-loop controls: one weight per well and control step,
//! all bounded to the admissible weight range. It maximizes the recovery
//! factor of a single permeability sample, so its result is a benchmark
//! rather than a robust policy.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{open_loop_return, ActionWeights, EnvironmentConfig, MultiGridEnv, MAX_WEIGHT, MIN_WEIGHT};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeConfig {
    pub population: usize,
    pub iterations: usize,
    /// Binomial crossover probability.
    pub crossover: f64,
    /// Range the mutation factor is redrawn from every generation.
    pub mutation: (f64, f64),
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self::case1()
    }
}

impl DeConfig {
    pub fn case1() -> Self {
        Self {
            population: 310,
            iterations: 1024,
            crossover: 0.9,
            mutation: (0.5, 1.0),
            lower: MIN_WEIGHT,
            upper: MAX_WEIGHT,
            seed: 0,
        }
    }

    pub fn case2() -> Self {
        Self {
            population: 105,
            ..Self::case1()
        }
    }

    pub fn desk() -> Self {
        Self {
            population: 40,
            iterations: 150,
            ..Self::case1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Contract(format!(
                "differential evolution needs at least 4 members, got {}",
                self.population
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::config("de.crossover", "must lie in [0, 1]"));
        }
        let (lo, hi) = self.mutation;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::config("de.mutation", "needs 0 <= low <= high"));
        }
        if !(self.lower < self.upper) {
            return Err(Error::config("de.lower", "lower bound must be below upper bound"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best value after initialization and after every generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub population: Vec<Vec<f64>>,
}

fn best_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Maximize `objective` over `[lower, upper]^dim` with rand/1/bin.
///
/// `seeds` fill the first members of the initial population; the rest is
/// drawn uniformly. Trials of a generation are evaluated in parallel.
pub fn de_optimize<F>(objective: F, dim: usize, seeds: &[Vec<f64>], config: &DeConfig) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    config.validate()?;
    if dim == 0 || seeds.iter().any(|s| s.len() != dim) {
        return Err(Error::Contract("seed vectors must match the decision dimension".into()));
    }
    let np = config.population;
    let mut rng = seeding::stream(config.seed, &[0xde]);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|i| match seeds.get(i) {
            Some(s) => s.iter().map(|v| v.clamp(config.lower, config.upper)).collect(),
            None => (0..dim).map(|_| rng.random_range(config.lower..=config.upper)).collect(),
        })
        .collect();
    let evaluate = |xs: &[Vec<f64>]| -> Result<Vec<f64>> { xs.par_iter().map(|x| objective(x)).collect() };
    let mut fitness = evaluate(&pop)?;
    let mut evaluations = np;
    let mut history = vec![fitness[best_index(&fitness)]];

    for generation in 0..config.iterations {
        let mut rng = seeding::stream(config.seed, &[0xde, generation as u64 + 1]);
        let (lo, hi) = config.mutation;
        let f = if lo < hi { rng.random_range(lo..hi) } else { lo };
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let k = rng.random_range(0..np);
                    if k != i {
                        break k;
                    }
                };
                let a = pick();
                let b = loop {
                    let k = pick();
                    if k != a {
                        break k;
                    }
                };
                let c = loop {
                    let k = pick();
                    if k != a && k != b {
                        break k;
                    }
                };
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        if j == forced || rng.random::<f64>() < config.crossover {
                            (pop[a][j] + f * (pop[b][j] - pop[c][j])).clamp(config.lower, config.upper)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let scores = evaluate(&trials)?;
        evaluations += np;
        for (i, (trial, score)) in trials.into_iter().zip(scores).enumerate() {
            if score >= fitness[i] {
                pop[i] = trial;
                fitness[i] = score;
            }
        }
        history.push(fitness[best_index(&fitness)]);
    }
    let b = best_index(&fitness);
    Ok(DeOutcome {
        best: pop[b].clone(),
        best_value: fitness[b],
        history,
        evaluations,
        population: pop,
    })
}

/// Split a flat decision vector into one action per control step.
pub fn decode_controls(x: &[f64], action_len: usize) -> Vec<ActionWeights> {
    x.chunks(action_len).map(ActionWeights::clipped).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellControlBenchmark {
    pub best_recovery: f64,
    pub base_recovery: f64,
    pub controls: Vec<ActionWeights>,
    pub evaluations: usize,
    pub history: Vec<f64>,
}

/// Best open-loop recovery factor for one sample on the finest grid.
pub fn de_wellcontrol(permeability: &ScalarField, env_config: &EnvironmentConfig, config: &DeConfig) -> Result<WellControlBenchmark> {
    let env_config = env_config.with_beta(1.0);
    let n_a = env_config.action_len();
    let dim = n_a * env_config.control_steps;
    let objective = |x: &[f64]| {
        let mut env = MultiGridEnv::new(env_config.clone())?;
        open_loop_return(&mut env, permeability, &decode_controls(x, n_a))
    };
    let equal = vec![MAX_WEIGHT; dim];
    let base_recovery = objective(&equal)?;
    let out = de_optimize(objective, dim, &[equal], config)?;
    Ok(WellControlBenchmark {
        best_recovery: out.best_value,
        base_recovery,
        controls: decode_controls(&out.best, n_a),
        evaluations: out.evaluations,
        history: out.history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub sample: usize,
    pub best_recovery: f64,
    pub evaluations: usize,
    pub seed: u64,
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("sample,best_recovery,evaluations,seed\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.sample, r.best_recovery, r.evaluations, r.seed);
    }
    out
}

pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    std::fs::write(path, benchmark_csv(rows))?;
    Ok(())
}
