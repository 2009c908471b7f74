//! Proximal policy optimization with a shared actor-critic MLP.
//!
//! The network is a tanh trunk with two heads: a linear layer giving the
//! mean of a diagonal Gaussian over raw action weights, and a single
//! linear unit giving the state value. The log standard deviation is a
//! free parameter per action dimension. All parameters live in one flat
//! vector so the optimizer and checkpoints can treat them uniformly;
//! gradients are computed by hand.
//!
//! Observations are standardized with running statistics before they
//! reach the network. Sampled actions are clipped into the admissible
//! weight range by the environment, while log-probabilities always refer
//! to the raw draw.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{episode_return, ActionWeights, EnvironmentConfig, MultiGridEnv, Observation};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::seeding;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Parallel actors `N`.
    pub actors: usize,
    /// Environment steps per actor and iteration `T`.
    pub steps: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    /// Hidden layer widths of the shared trunk.
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    /// Initial mean of every action weight.
    pub initial_action: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::case1()
    }
}

impl PpoConfig {
    pub fn case1() -> Self {
        Self {
            actors: 64,
            steps: 40,
            minibatch: 16,
            epochs: 20,
            gamma: 0.99,
            clip: 0.1,
            learning_rate: 3e-6,
            gae_lambda: 0.95,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
            hidden: vec![150, 100, 80],
            log_std_init: 0.0,
            initial_action: 0.5,
        }
    }

    pub fn case2() -> Self {
        Self {
            clip: 0.15,
            learning_rate: 1e-4,
            hidden: vec![70, 70, 50],
            ..Self::case1()
        }
    }

    /// Settings for the reduced desk-scale runs.
    pub fn desk() -> Self {
        Self {
            actors: 8,
            steps: 40,
            minibatch: 64,
            epochs: 10,
            learning_rate: 1e-3,
            log_std_init: -1.0,
            ..Self::case1()
        }
    }

    pub fn batch_size(&self) -> usize {
        self.actors * self.steps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("ppo.{field}"), msg));
        if self.actors == 0 || self.steps == 0 || self.epochs == 0 {
            return bad("actors", "actors, steps and epochs must be positive");
        }
        if self.minibatch == 0 || self.minibatch > self.batch_size() {
            return bad("minibatch", "must lie in 1..=actors*steps");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip", "must be positive");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate", "must be nonnegative");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one nonempty hidden layer");
        }
        Ok(())
    }
}

/// Shared-trunk actor-critic network over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input followed by each hidden layer's output.
    pub layers: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub value: f64,
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    // Offsets of W_l, b_l for every dense layer, then value weights,
    // value bias and log-std.
    let mut offsets = Vec::new();
    let mut at = 0;
    for w in sizes.windows(2) {
        offsets.push(at);
        at += w[0] * w[1];
        offsets.push(at);
        at += w[1];
    }
    let last_hidden = sizes[sizes.len() - 2];
    offsets.push(at);
    at += last_hidden;
    offsets.push(at);
    at += 1;
    offsets.push(at);
    at += sizes[sizes.len() - 1];
    (offsets, at)
}

impl PolicyNetwork {
    /// Zero-initialized network with the given layer sizes `[input, hidden.., output]`.
    pub fn zeros(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 3 || sizes.contains(&0) {
            return Err(Error::Contract(format!("bad layer sizes {sizes:?}")));
        }
        let (offsets, n) = layout(&sizes);
        Ok(Self {
            sizes,
            params: vec![0.0; n],
            offsets,
        })
    }

    /// Random trunk and value head, a near-zero mean head biased to `initial_action`.
    pub fn init<R: Rng + ?Sized>(sizes: Vec<usize>, initial_action: f64, log_std: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let dense = net.sizes.len() - 1;
        for l in 0..dense {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let gain = if l + 1 == dense { 0.01 } else { 1.0 };
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
            let w = net.offsets[2 * l];
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = normal.sample(rng);
            }
            let b = net.offsets[2 * l + 1];
            if l + 1 == dense {
                net.params[b..b + fan_out].fill(initial_action);
            }
        }
        let h = net.sizes[dense - 1];
        let normal = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("positive std");
        let v = net.offsets[2 * dense];
        for p in &mut net.params[v..v + h] {
            *p = normal.sample(rng);
        }
        net.log_std_mut().fill(log_std.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn log_std_offset(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std_offset()..]
    }

    fn log_std_mut(&mut self) -> &mut [f64] {
        let at = self.log_std_offset();
        &mut self.params[at..]
    }

    fn clamp_log_std(&mut self) {
        for v in self.log_std_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Forward> {
        if input.len() != self.input_len() {
            return Err(Error::Contract(format!(
                "observation has {} entries, network expects {}",
                input.len(),
                self.input_len()
            )));
        }
        let dense = self.sizes.len() - 1;
        let mut layers = vec![input.to_vec()];
        let mut mean = Vec::new();
        for l in 0..dense {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[self.offsets[2 * l]..self.offsets[2 * l] + n_in * n_out];
            let b = &self.params[self.offsets[2 * l + 1]..self.offsets[2 * l + 1] + n_out];
            let x = &layers[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l + 1 == dense {
                mean = z;
            } else {
                layers.push(z.into_iter().map(f64::tanh).collect());
            }
        }
        let h = &layers[dense - 1];
        let v = self.offsets[2 * dense];
        let value = self.params[v + h.len()] + self.params[v..v + h.len()].iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        Ok(Forward { layers, mean, value })
    }

    /// Accumulate into `grad` the gradient for upstream derivatives
    /// `d_mean` and `d_value` at the given forward pass.
    fn backward(&self, fwd: &Forward, d_mean: &[f64], d_value: f64, grad: &mut [f64]) {
        let dense = self.sizes.len() - 1;
        let h_last = &fwd.layers[dense - 1];
        let v = self.offsets[2 * dense];
        let mut dh = vec![0.0; h_last.len()];
        for (k, &hk) in h_last.iter().enumerate() {
            grad[v + k] += d_value * hk;
            dh[k] += d_value * self.params[v + k];
        }
        grad[v + h_last.len()] += d_value;

        let mut upstream = d_mean.to_vec();
        for l in (0..dense).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (self.offsets[2 * l], self.offsets[2 * l + 1]);
            let x = &fwd.layers[l];
            let dz: Vec<f64> = if l + 1 == dense {
                upstream
            } else {
                let out = &fwd.layers[l + 1];
                upstream.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect()
            };
            let mut dx = if l == dense - 1 { dh.clone() } else { vec![0.0; n_in] };
            for o in 0..n_out {
                let g = dz[o];
                if g == 0.0 {
                    continue;
                }
                grad[b + o] += g;
                let row = w + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += g * x[i];
                    dx[i] += g * self.params[row + i];
                }
            }
            upstream = dx;
        }
    }
}

/// Log-density of `x` under a diagonal Gaussian.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), s)| {
            let z = (x - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (LN_2PI + 1.0)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub weights: ActionWeights,
}

pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> SampledAction {
    let raw: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SampledAction {
        log_prob: gaussian_log_prob(&raw, mean, log_std),
        weights: ActionWeights::clipped(&raw),
        raw,
    }
}

/// Generalized advantage estimates and value targets.
///
/// `dones[t]` marks that the episode ended after step `t`; `last_value`
/// bootstraps the state following the final step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// One transition used in an update.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub raw_observation: Vec<f64>,
    /// Standardized observation the action was chosen from.
    pub observation: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub weights: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    pub log_prob: f64,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    /// Completed episodes in this batch.
    pub episodes: usize,
    /// Mean undiscounted return of the completed episodes.
    pub mean_episode_return: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss over `batch` and its gradient.
///
/// The loss is `-surrogate + vf_coef * mse(value) - ent_coef * entropy`,
/// averaged over the batch. Advantages are used as given.
pub fn ppo_loss(
    net: &PolicyNetwork,
    batch: &[&Transition],
    clip: f64,
    vf_coef: f64,
    ent_coef: f64,
) -> Result<(LossTerms, Vec<f64>)> {
    let mut grad = vec![0.0; net.param_count()];
    if batch.is_empty() {
        return Ok((LossTerms::default(), grad));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let log_std = net.log_std().to_vec();
    let ls_at = net.log_std_offset();
    let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut terms = LossTerms::default();
    for tr in batch {
        let fwd = net.forward(&tr.observation)?;
        let log_prob = gaussian_log_prob(&tr.raw_action, &fwd.mean, &log_std);
        let ratio = (log_prob - tr.log_prob).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let unclipped_term = ratio * tr.advantage;
        let clipped_term = clipped * tr.advantage;
        terms.policy -= unclipped_term.min(clipped_term) * inv_n;
        let d_log_prob = if clipped_term < unclipped_term {
            terms.clip_fraction += inv_n;
            0.0
        } else {
            -tr.advantage * ratio * inv_n
        };
        let err = fwd.value - tr.target;
        terms.value += err * err * inv_n;
        let d_value = 2.0 * vf_coef * err * inv_n;

        let d_mean: Vec<f64> = (0..log_std.len())
            .map(|d| d_log_prob * (tr.raw_action[d] - fwd.mean[d]) * inv_var[d])
            .collect();
        if d_log_prob != 0.0 {
            for d in 0..log_std.len() {
                let z2 = (tr.raw_action[d] - fwd.mean[d]).powi(2) * inv_var[d];
                grad[ls_at + d] += d_log_prob * (z2 - 1.0);
            }
        }
        net.backward(&fwd, &d_mean, d_value, &mut grad);
    }
    terms.entropy = gaussian_entropy(&log_std);
    for g in &mut grad[ls_at..] {
        *g -= ent_coef;
    }
    terms.total = terms.policy + vf_coef * terms.value - ent_coef * terms.entropy;
    if !terms.total.is_finite() {
        return Err(Error::numerical("PPO loss is not finite", terms.total));
    }
    Ok((terms, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-5;

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.first[i] / c1) / ((self.second[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Running mean and variance used to standardize observations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMeanStd {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub frozen: bool,
}

const OBS_CLIP: f64 = 10.0;

impl RunningMeanStd {
    pub fn new(n: usize) -> Self {
        Self {
            count: 1e-4,
            mean: vec![0.0; n],
            var: vec![1.0; n],
            frozen: false,
        }
    }

    /// Merge a batch of observations (ignored once frozen).
    pub fn update(&mut self, batch: &[&[f64]]) {
        if self.frozen || batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let total = self.count + n;
        for d in 0..self.mean.len() {
            let bm = batch.iter().map(|x| x[d]).sum::<f64>() / n;
            let bv = batch.iter().map(|x| (x[d] - bm).powi(2)).sum::<f64>() / n;
            let delta = bm - self.mean[d];
            let m2 = self.var[d] * self.count + bv * n + delta * delta * self.count * n / total;
            self.mean[d] += delta * n / total;
            self.var[d] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| ((x - m) / (v + 1e-8).sqrt()).clamp(-OBS_CLIP, OBS_CLIP))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub loss: LossTerms,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Policy parameters plus everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoAgent {
    pub network: PolicyNetwork,
    pub optimizer: Adam,
    pub normalizer: RunningMeanStd,
    /// Training episodes consumed so far.
    pub episodes: u64,
}

impl PpoAgent {
    pub fn new(obs_len: usize, action_len: usize, config: &PpoConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![obs_len];
        sizes.extend(&config.hidden);
        sizes.push(action_len);
        let network = PolicyNetwork::init(
            sizes,
            config.initial_action,
            config.log_std_init,
            &mut seeding::stream(seed, &[0x1417]),
        )?;
        Ok(Self::from_network(network))
    }

    pub fn from_network(network: PolicyNetwork) -> Self {
        let n = network.param_count();
        let obs = network.input_len();
        Self {
            network,
            optimizer: Adam::new(n),
            normalizer: RunningMeanStd::new(obs),
            episodes: 0,
        }
    }

    /// A policy whose deterministic action opens all wells equally.
    pub fn base_policy(obs_len: usize, action_len: usize, hidden: &[usize]) -> Result<Self> {
        let mut sizes = vec![obs_len];
        sizes.extend(hidden);
        sizes.push(action_len);
        let mut net = PolicyNetwork::zeros(sizes)?;
        let dense = net.sizes.len() - 1;
        let b = net.offsets[2 * (dense - 1) + 1];
        net.params[b..b + action_len].fill(1.0);
        Ok(Self::from_network(net))
    }

    pub fn forward(&self, obs: &Observation) -> Result<Forward> {
        self.network.forward(&self.normalizer.normalize(obs.as_slice()))
    }

    /// Mean action, clipped into the weight range.
    pub fn act(&self, obs: &Observation) -> Result<ActionWeights> {
        Ok(ActionWeights::clipped(&self.forward(obs)?.mean))
    }

    /// Run `steps` environment steps per actor on randomly drawn training samples.
    pub fn collect_rollouts(
        &self,
        env_config: &EnvironmentConfig,
        samples: &[ScalarField],
        config: &PpoConfig,
        seed: u64,
        iteration: u64,
    ) -> Result<RolloutBatch> {
        if samples.is_empty() {
            return Err(Error::Contract("no training samples".into()));
        }
        let parts = (0..config.actors)
            .into_par_iter()
            .map(|actor| self.run_actor(env_config, samples, config, seed, iteration, actor as u64))
            .collect::<Result<Vec<_>>>()?;
        let mut batch = RolloutBatch::default();
        let mut return_sum = 0.0;
        for (transitions, returns) in parts {
            batch.transitions.extend(transitions);
            batch.episodes += returns.len();
            return_sum += returns.iter().sum::<f64>();
        }
        if batch.episodes > 0 {
            batch.mean_episode_return = return_sum / batch.episodes as f64;
        }
        Ok(batch)
    }

    fn run_actor(
        &self,
        env_config: &EnvironmentConfig,
        samples: &[ScalarField],
        config: &PpoConfig,
        seed: u64,
        iteration: u64,
        actor: u64,
    ) -> Result<(Vec<Transition>, Vec<f64>)> {
        let mut rng = seeding::stream(seed, &[iteration, actor]);
        let mut env = MultiGridEnv::new(env_config.clone())?;
        let mut out = Vec::with_capacity(config.steps);
        let mut returns = Vec::new();
        let mut episode_sum = 0.0;
        let mut obs = env.reset(&samples[rng.random_range(0..samples.len())])?;
        for t in 0..config.steps {
            let x = self.normalizer.normalize(obs.as_slice());
            let fwd = self.network.forward(&x)?;
            let a = sample_action(&fwd.mean, self.network.log_std(), &mut rng);
            let step = env.step(&a.weights)?;
            episode_sum += step.reward;
            out.push(Transition {
                raw_observation: obs.as_slice().to_vec(),
                observation: x,
                raw_action: a.raw,
                weights: a.weights.as_slice().to_vec(),
                reward: step.reward,
                done: step.done,
                value: fwd.value,
                log_prob: a.log_prob,
                advantage: 0.0,
                target: 0.0,
            });
            if step.done {
                returns.push(episode_sum);
                episode_sum = 0.0;
                if t + 1 < config.steps {
                    obs = env.reset(&samples[rng.random_range(0..samples.len())])?;
                }
            } else {
                obs = step.observation;
            }
        }
        let last_value = if out.last().is_some_and(|t| t.done) {
            0.0
        } else {
            self.forward(&obs)?.value
        };
        let rewards: Vec<f64> = out.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = out.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = out.iter().map(|t| t.done).collect();
        let (adv, targets) = gae(&rewards, &values, &dones, last_value, config.gamma, config.gae_lambda);
        for (t, (a, r)) in out.iter_mut().zip(adv.into_iter().zip(targets)) {
            t.advantage = a;
            t.target = r;
        }
        Ok((out, returns))
    }

    /// `epochs` passes of shuffled minibatches with Adam and global norm clipping.
    pub fn update(&mut self, batch: &RolloutBatch, config: &PpoConfig, seed: u64, iteration: u64) -> Result<UpdateStats> {
        let n = batch.len();
        if n == 0 {
            return Ok(UpdateStats::default());
        }
        let mut rng = seeding::stream(seed, &[iteration, 0x5ff1e]);
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                let mut mb: Vec<Transition> = chunk.iter().map(|&i| batch.transitions[i].clone()).collect();
                normalize_advantages(&mut mb);
                let refs: Vec<&Transition> = mb.iter().collect();
                let (terms, mut grad) = ppo_loss(&self.network, &refs, config.clip, config.vf_coef, config.ent_coef)?;
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(Error::numerical("gradient is not finite", norm));
                }
                if norm > config.max_grad_norm {
                    let s = config.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
                self.optimizer.apply(&mut self.network.params, &grad, config.learning_rate);
                self.network.clamp_log_std();
                stats.loss = terms;
                stats.grad_norm = norm;
                stats.minibatches += 1;
            }
        }
        Ok(stats)
    }

    /// Fold the batch's raw observations into the running statistics.
    pub fn observe(&mut self, batch: &RolloutBatch) {
        let refs: Vec<&[f64]> = batch.transitions.iter().map(|t| t.raw_observation.as_slice()).collect();
        self.normalizer.update(&refs);
    }
}

fn normalize_advantages(mb: &mut [Transition]) {
    let n = mb.len() as f64;
    let mean = mb.iter().map(|t| t.advantage).sum::<f64>() / n;
    if mb.len() < 2 {
        for t in mb.iter_mut() {
            t.advantage -= mean;
        }
        return;
    }
    let std = (mb.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for t in mb.iter_mut() {
        t.advantage = (t.advantage - mean) / (std + 1e-8);
    }
}

/// Mean deterministic episode return over `samples`.
pub fn evaluate_policy_return(agent: &PpoAgent, env_config: &EnvironmentConfig, samples: &[ScalarField]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("no evaluation samples".into()));
    }
    let returns = evaluate_per_sample(agent, env_config, samples)?;
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

/// Deterministic episode return for each sample.
pub fn evaluate_per_sample(agent: &PpoAgent, env_config: &EnvironmentConfig, samples: &[ScalarField]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|k| {
            let mut env = MultiGridEnv::new(env_config.clone())?;
            let mut failure = None;
            let r = episode_return(&mut env, k, |obs| match agent.act(obs) {
                Ok(a) => a,
                Err(e) => {
                    failure.get_or_insert(e);
                    ActionWeights::equal(env_config.action_len())
                }
            })?;
            match failure {
                Some(e) => Err(e),
                None => Ok(r),
            }
        })
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MGRLCKPT";
const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl PpoAgent {
    /// Serialize to the versioned little-endian checkpoint layout:
    ///
    /// ```text
    /// magic "MGRLCKPT" | version u32 | layer count u32 | sizes u32*
    /// | param count u64 | params f64* | adam step u64 | adam m f64* | adam v f64*
    /// | normalizer count f64 | mean f64* | var f64* | frozen u8 | episodes u64
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, self.network.sizes.len() as u32);
        for &s in &self.network.sizes {
            put_u32(&mut out, s as u32);
        }
        put_u64(&mut out, self.network.params.len() as u64);
        put_f64s(&mut out, &self.network.params);
        put_u64(&mut out, self.optimizer.step);
        put_f64s(&mut out, &self.optimizer.first);
        put_f64s(&mut out, &self.optimizer.second);
        put_f64s(&mut out, &[self.normalizer.count]);
        put_f64s(&mut out, &self.normalizer.mean);
        put_f64s(&mut out, &self.normalizer.var);
        out.push(self.normalizer.frozen as u8);
        put_u64(&mut out, self.episodes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut c = Cursor { bytes, at: 0 };
        if c.take(8)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let layers = c.u32()? as usize;
        if layers > 64 {
            return Err(format!("implausible layer count {layers}"));
        }
        let sizes = (0..layers).map(|_| c.u32().map(|s| s as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let mut network = PolicyNetwork::zeros(sizes).map_err(|e| e.to_string())?;
        let n = c.u64()? as usize;
        if n != network.param_count() {
            return Err(format!("expected {} parameters, found {n}", network.param_count()));
        }
        network.params = c.f64s(n)?;
        let step = c.u64()?;
        let optimizer = Adam {
            step,
            first: c.f64s(n)?,
            second: c.f64s(n)?,
        };
        let obs = network.input_len();
        let count = c.f64s(1)?[0];
        let normalizer = RunningMeanStd {
            count,
            mean: c.f64s(obs)?,
            var: c.f64s(obs)?,
            frozen: c.take(1)?[0] != 0,
        };
        let episodes = c.u64()?;
        if c.at != bytes.len() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(Self {
            network,
            optimizer,
            normalizer,
            episodes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}
