//! Soft Actor-Critic with twin critics, target networks and automatic
//! temperature, generic over the actor so the same loop trains single
//! experts and the gating network of a composite policy.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episode::{
    run_episode, ActionSource, EpisodeConfig, EpisodeOptions, PolicyOutput, StepContext, Task, UniformRandomSource,
    EPISODE_STEPS,
};
use crate::error::{Error, Result};
use crate::gait::GaitType;
use crate::geometry::{JointVector, NUM_JOINTS};
use crate::nn::{soft_update, Adam, Init, Matrix, Mlp};
use crate::policy::{
    mean_action, sample_action, CompositePolicy, ExpertSet, GatingNetwork, GaussianActor, TrainableActor, NUM_EXPERTS,
};
use crate::reward::{Goal, RewardEngine, RewardTerms, RewardWeights, SwitchCriteria, MAX_GOAL_DISTANCE};
use crate::rng::{RngStream, Stream};
use crate::sim::{JointLimits, ResetMode, Simulator};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: JointVector,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Set on the last step of an episode (a time limit, never a failure).
    pub done: bool,
}

/// Fixed-capacity ring of transitions stored column-wise.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    head: usize,
    len: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<JointVector>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// A sampled minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        ReplayBuffer {
            capacity,
            obs_dim,
            head: 0,
            len: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: self.obs_dim,
                actual: t.obs.len().max(t.next_obs.len()),
            });
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let i = self.head;
            let d = self.obs_dim;
            self.obs[i * d..(i + 1) * d].copy_from_slice(&t.obs);
            self.next_obs[i * d..(i + 1) * d].copy_from_slice(&t.next_obs);
            self.actions[i] = t.action;
            self.rewards[i] = t.reward;
            self.dones[i] = t.done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let d = self.obs_dim;
        Some(Transition {
            obs: self.obs[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: self.next_obs[i * d..(i + 1) * d].to_vec(),
            done: self.dones[i],
        })
    }

    /// Uniform sampling with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Batch> {
        if self.len < batch || batch == 0 {
            return Err(Error::BufferUnderfull { size: self.len, batch });
        }
        let d = self.obs_dim;
        let mut b = Batch {
            obs: Matrix::zeros(batch, d),
            actions: Matrix::zeros(batch, NUM_JOINTS),
            rewards: Vec::with_capacity(batch),
            next_obs: Matrix::zeros(batch, d),
            dones: Vec::with_capacity(batch),
        };
        for r in 0..batch {
            let i = rng.random_range(0..self.len);
            b.obs.row_mut(r).copy_from_slice(&self.obs[i * d..(i + 1) * d]);
            b.next_obs
                .row_mut(r)
                .copy_from_slice(&self.next_obs[i * d..(i + 1) * d]);
            b.actions.row_mut(r).copy_from_slice(&self.actions[i]);
            b.rewards.push(self.rewards[i]);
            b.dones.push(self.dones[i]);
        }
        Ok(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Temperature {
    Auto { initial: f64, target_entropy: f64 },
    Fixed { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub steps_per_epoch: usize,
    pub episode_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub gamma: f64,
    pub temperature: Temperature,
    pub buffer_capacity: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Gradient updates per collected environment step.
    pub updates_per_step: f64,
    /// Treat the episode time limit as a truncation and bootstrap through it.
    pub bootstrap_time_limit: bool,
    /// Quadratic pull on action means that leave the joint limits, where the
    /// clamp hides them from the critic gradient.
    pub mean_bound_penalty: f64,
    /// Starting log standard deviation of a freshly initialized expert.
    pub initial_log_std: f64,
    /// Environment steps collected with uniform random joint targets before
    /// the actor is used, rounded up to whole episodes.
    pub warmup_steps: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            steps_per_epoch: 5000,
            episode_steps: EPISODE_STEPS,
            batch: 128,
            lr: 3e-4,
            weight_decay: 1e-6,
            tau: 0.001,
            gamma: 0.955,
            temperature: Temperature::Auto {
                initial: 0.005,
                target_entropy: -(NUM_JOINTS as f64),
            },
            buffer_capacity: 1_000_000,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            updates_per_step: 1.0,
            bootstrap_time_limit: true,
            mean_bound_penalty: 1.0,
            initial_log_std: -1.5,
            warmup_steps: 0,
        }
    }
}

impl SacConfig {
    /// Discount used for `gait`'s skill.
    pub fn gamma_for(gait: GaitType) -> f64 {
        match gait {
            GaitType::Recovery => 0.995,
            _ => 0.955,
        }
    }

    pub fn for_gait(gait: GaitType) -> Self {
        SacConfig {
            gamma: Self::gamma_for(gait),
            ..Default::default()
        }
    }

    pub fn episodes_per_epoch(&self) -> usize {
        self.steps_per_epoch.checked_div(self.episode_steps).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str| Err(Error::Config(format!("sac.{k} is out of range")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma");
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad("tau");
        }
        if !(self.lr > 0.0) {
            return bad("lr");
        }
        if self.batch == 0 {
            return bad("batch");
        }
        if self.episode_steps == 0 || !self.steps_per_epoch.is_multiple_of(self.episode_steps) {
            return bad("steps_per_epoch");
        }
        if !(self.updates_per_step >= 0.0) {
            return bad("updates_per_step");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Actor, twin critics, their targets and optimizer state.
#[derive(Clone, Debug)]
pub struct Sac<A: TrainableActor> {
    pub actor: A,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub action_offset: JointVector,
    pub limits: JointLimits,
    pub config: SacConfig,
    pub log_alpha: f64,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
}

impl<A: TrainableActor> Sac<A> {
    pub fn new(actor: A, action_offset: JointVector, config: SacConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![actor.obs_dim() + NUM_JOINTS];
        sizes.extend_from_slice(&config.critic_hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, Init::default(), rng);
        let q2 = Mlp::new(&sizes, Init::default(), rng);
        let log_alpha = match config.temperature {
            Temperature::Auto { initial, .. } => initial.ln(),
            Temperature::Fixed { value } => value.ln(),
        };
        Ok(Sac {
            actor_opt: Adam::new(actor.params().len(), config.lr, config.weight_decay),
            q1_opt: Adam::new(q1.param_count(), config.lr, config.weight_decay),
            q2_opt: Adam::new(q2.param_count(), config.lr, config.weight_decay),
            alpha_opt: Adam::new(1, config.lr, 0.0),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            actor,
            action_offset,
            limits: JointLimits::default(),
            config,
            log_alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        match self.config.temperature {
            Temperature::Fixed { value } => value,
            Temperature::Auto { .. } => self.log_alpha.exp(),
        }
    }

    fn critic_input(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let mut rel = actions.clone();
        for r in 0..rel.rows {
            for (a, o) in rel.row_mut(r).iter_mut().zip(&self.action_offset) {
                *a -= o;
            }
        }
        obs.hstack(&rel)
    }

    /// Reparameterized draw for a batch: clamped actions, pre-clamp log
    /// probabilities, the noise used and a mask of unclamped coordinates.
    fn reparam(&self, mean: &Matrix, std: &Matrix, rng: &mut impl Rng) -> (Matrix, Vec<f64>, Matrix, Matrix) {
        let limits = &self.limits;
        let rows = mean.rows;
        let mut actions = Matrix::zeros(rows, NUM_JOINTS);
        let mut eps = Matrix::zeros(rows, NUM_JOINTS);
        let mut mask = Matrix::zeros(rows, NUM_JOINTS);
        let mut logp = vec![0.0; rows];
        for r in 0..rows {
            for j in 0..NUM_JOINTS {
                let e: f64 = rng.sample(StandardNormal);
                let (m, s) = (mean.row(r)[j], std.row(r)[j]);
                let raw = m + s * e;
                let [lo, hi] = limits.bounds(j);
                let a = raw.clamp(lo, hi);
                actions.row_mut(r)[j] = a;
                eps.row_mut(r)[j] = e;
                mask.row_mut(r)[j] = if a == raw { 1.0 } else { 0.0 };
                logp[r] += -0.5 * e * e - s.ln() - 0.918_938_533_204_672_7;
            }
        }
        (actions, logp, eps, mask)
    }

    /// Entropy-regularized Bellman targets, computed with the target critics.
    pub fn critic_targets(&self, batch: &Batch, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let (mean, std, _) = self.actor.dist_batch(&batch.next_obs)?;
        let (next_a, next_logp, _, _) = self.reparam(&mean, &std, rng);
        let x = self.critic_input(&batch.next_obs, &next_a)?;
        let t1 = self.q1_target.forward_batch(&x)?.into_output();
        let t2 = self.q2_target.forward_batch(&x)?.into_output();
        let alpha = self.alpha();
        Ok((0..batch.rewards.len())
            .map(|r| {
                let cont = if batch.dones[r] && !self.config.bootstrap_time_limit {
                    0.0
                } else {
                    1.0
                };
                let v = t1.data[r].min(t2.data[r]) - alpha * next_logp[r];
                batch.rewards[r] + self.config.gamma * cont * v
            })
            .collect())
    }

    /// One critic step, one actor step, one temperature step and a soft
    /// target update.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut impl Rng) -> Result<LossReport> {
        let batch = buffer.sample(self.config.batch, rng)?;
        let n = batch.rewards.len() as f64;
        let y = self.critic_targets(&batch, rng)?;

        let x = self.critic_input(&batch.obs, &batch.actions)?;
        let mut critic_loss = 0.0;
        for (q, opt) in [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)] {
            let (loss, grads) = q.gradients(&x, |out| {
                let mut g = Matrix::zeros(out.rows, 1);
                let mut loss = 0.0;
                for r in 0..out.rows {
                    let e = out.data[r] - y[r];
                    loss += 0.5 * e * e;
                    g.data[r] = e / n;
                }
                (loss / n, g)
            })?;
            critic_loss += loss;
            opt.update(q.params_mut(), &grads);
        }

        let alpha = self.alpha();
        let (mean, std, cache) = self.actor.dist_batch(&batch.obs)?;
        let (a, logp, eps, mask) = self.reparam(&mean, &std, rng);
        let xa = self.critic_input(&batch.obs, &a)?;
        let c1 = self.q1.forward_batch(&xa)?;
        let c2 = self.q2.forward_batch(&xa)?;
        let (o1, o2) = (c1.output().data.clone(), c2.output().data.clone());
        let mut sel1 = Matrix::zeros(a.rows, 1);
        let mut sel2 = Matrix::zeros(a.rows, 1);
        let mut actor_loss = 0.0;
        for r in 0..a.rows {
            let q = if o1[r] <= o2[r] {
                sel1.data[r] = 1.0;
                o1[r]
            } else {
                sel2.data[r] = 1.0;
                o2[r]
            };
            actor_loss += alpha * logp[r] - q;
        }
        actor_loss /= n;
        let mut scratch1 = vec![0.0; self.q1.param_count()];
        let mut scratch2 = vec![0.0; self.q2.param_count()];
        let gx1 = self.q1.backward(&c1, &sel1, &mut scratch1);
        let gx2 = self.q2.backward(&c2, &sel2, &mut scratch2);
        let obs_dim = batch.obs.cols;
        let mut d_mean = Matrix::zeros(a.rows, NUM_JOINTS);
        let mut d_std = Matrix::zeros(a.rows, NUM_JOINTS);
        for r in 0..a.rows {
            for j in 0..NUM_JOINTS {
                let dq = gx1.row(r)[obs_dim + j] + gx2.row(r)[obs_dim + j];
                let m = mask.row(r)[j];
                let [lo, hi] = self.limits.bounds(j);
                let mu = mean.row(r)[j];
                let excess = (mu - hi).max(0.0) - (lo - mu).max(0.0);
                actor_loss += self.config.mean_bound_penalty * excess * excess / n;
                d_mean.row_mut(r)[j] = (-dq * m + 2.0 * self.config.mean_bound_penalty * excess) / n;
                d_std.row_mut(r)[j] = (-dq * m * eps.row(r)[j] - alpha / std.row(r)[j]) / n;
            }
        }
        let grads = self.actor.backward(&cache, &d_mean, &d_std);
        self.actor_opt.update(self.actor.params_mut(), &grads);

        let mean_logp = logp.iter().sum::<f64>() / n;
        if let Temperature::Auto { target_entropy, .. } = self.config.temperature {
            let g = [-(mean_logp + target_entropy)];
            let mut p = [self.log_alpha];
            self.alpha_opt.update(&mut p, &g);
            self.log_alpha = p[0];
        }

        soft_update(self.q1_target.params_mut(), self.q1.params(), self.config.tau);
        soft_update(self.q2_target.params_mut(), self.q2.params(), self.config.tau);

        Ok(LossReport {
            critic_loss,
            actor_loss,
            alpha,
            entropy: -mean_logp,
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        let all = [
            ("actor", self.actor.params()),
            ("q1", self.q1.params()),
            ("q2", self.q2.params()),
            ("q1_target", self.q1_target.params()),
            ("q2_target", self.q2_target.params()),
        ];
        for (field, p) in all {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field });
            }
        }
        if !self.log_alpha.is_finite() {
            return Err(Error::NonFinite { field: "log_alpha" });
        }
        Ok(())
    }
}

/// Free-function form of [`Sac::update`].
pub fn sac_update<A: TrainableActor>(
    sac: &mut Sac<A>,
    buffer: &ReplayBuffer,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    sac.update(buffer, rng)
}

/// Samples (or takes the mean of) any trainable actor.
pub struct ActorSource<'a, A: TrainableActor> {
    pub actor: &'a A,
    pub stochastic: bool,
    /// Weights reported for actors that are not composites.
    pub label: [f64; NUM_EXPERTS],
    pub limits: JointLimits,
}

impl<A: TrainableActor> ActionSource for ActorSource<'_, A> {
    fn act(&mut self, ctx: &StepContext, rng: &mut RngStream) -> Result<PolicyOutput> {
        let (dist, w) = self.actor.act_distribution(ctx.obs)?;
        let limits = self.limits;
        let action = if self.stochastic {
            sample_action(&dist, &limits, rng).0
        } else {
            mean_action(&dist, &limits)
        };
        let weights = match w {
            Some(w) => w
                .try_into()
                .map_err(|_| Error::InvalidArgument("gating width".into()))?,
            None => self.label,
        };
        Ok(PolicyOutput { action, weights })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub episodes: usize,
    pub invalid_episodes: usize,
    pub steps: usize,
    /// Over valid episodes.
    pub mean_return: f64,
    pub mean_step_reward: f64,
    pub term_means: [f64; 11],
    /// Σ r_g over every step of the epoch's valid episodes.
    pub goal_reward_sum: f64,
    pub alpha: f64,
    pub critic_loss: f64,
}

/// How episodes of an epoch are configured.
pub trait EpisodeSchedule {
    fn episode(&mut self, index: usize, rng: &mut RngStream) -> EpisodeConfig;
}

/// The same task every episode.
pub struct FixedTask(pub EpisodeConfig);

impl EpisodeSchedule for FixedTask {
    fn episode(&mut self, _index: usize, _rng: &mut RngStream) -> EpisodeConfig {
        self.0.clone()
    }
}

/// Goal tracking with a fresh uniformly sampled goal each episode.
pub struct RandomGoals {
    pub criteria: SwitchCriteria,
    pub reset: ResetMode,
    pub steps: usize,
}

/// `d ~ U[0, 15)`, `θ ~ U[-π, π)`.
pub fn sample_goal(rng: &mut impl Rng) -> Goal {
    let d = rng.random_range(0.0..MAX_GOAL_DISTANCE);
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Goal::polar(d, theta).expect("sampled distance is within range")
}

impl EpisodeSchedule for RandomGoals {
    fn episode(&mut self, _index: usize, rng: &mut RngStream) -> EpisodeConfig {
        EpisodeConfig {
            steps: self.steps,
            reset: self.reset,
            task: Task::Multi {
                goal: sample_goal(rng),
                criteria: self.criteria,
            },
        }
    }
}

/// Runs one epoch worth of episodes, pushing every transition. Episode
/// seeds and goals are drawn from `rng`.
pub fn collect_epoch<A: TrainableActor>(
    sim: &mut Simulator,
    engine: &RewardEngine,
    actor: &A,
    label: [f64; NUM_EXPERTS],
    schedule: &mut dyn EpisodeSchedule,
    episodes: usize,
    random_episodes: usize,
    buffer: &mut ReplayBuffer,
    rng: &mut RngStream,
) -> Result<EpochStats> {
    let mut stats = EpochStats::default();
    let mut valid_steps = 0usize;
    let mut valid_return = 0.0;
    let mut terms = [0.0; 11];
    for i in 0..episodes {
        let cfg = schedule.episode(i, rng);
        let seed = rng.child_seed();
        let traj = if i < random_episodes {
            let mut source = UniformRandomSource::new(sim);
            run_episode(sim, engine, &mut source, &cfg, seed, EpisodeOptions::default())?
        } else {
            let mut source = ActorSource {
                actor,
                stochastic: true,
                label,
                limits: sim.config.limits,
            };
            run_episode(sim, engine, &mut source, &cfg, seed, EpisodeOptions::default())?
        };
        let n = traj.steps.len();
        for k in 0..n {
            let rec = &traj.steps[k];
            let next_obs = if k + 1 < n {
                traj.steps[k + 1].obs.clone()
            } else {
                traj.final_obs.clone()
            };
            buffer.push(Transition {
                obs: rec.obs.clone(),
                action: rec.action,
                reward: rec.reward,
                next_obs,
                done: traj.valid && k + 1 == n,
            })?;
        }
        stats.episodes += 1;
        stats.steps += cfg.steps;
        if !traj.valid {
            stats.invalid_episodes += 1;
            continue;
        }
        valid_steps += n;
        valid_return += traj.total_reward();
        stats.goal_reward_sum += traj.goal_reward_sum();
        for rec in &traj.steps {
            for (t, name) in terms.iter_mut().zip(RewardTerms::NAMES) {
                *t += rec.reward_terms.get(name).copied().unwrap_or(0.0);
            }
        }
    }
    let valid_eps = stats.episodes - stats.invalid_episodes;
    if valid_eps > 0 {
        stats.mean_return = valid_return / valid_eps as f64;
    }
    if valid_steps > 0 {
        stats.mean_step_reward = valid_return / valid_steps as f64;
        stats.term_means = terms.map(|t| t / valid_steps as f64);
    }
    Ok(stats)
}

/// Alternates collection and updates for `epochs` epochs.
#[allow(clippy::too_many_arguments)]
pub fn train_loop<A: TrainableActor>(
    sac: &mut Sac<A>,
    sim: &mut Simulator,
    engine: &RewardEngine,
    label: [f64; NUM_EXPERTS],
    schedule: &mut dyn EpisodeSchedule,
    buffer: &mut ReplayBuffer,
    epochs: usize,
    first_epoch: usize,
    rng: &mut RngStream,
) -> Result<Vec<EpochStats>> {
    let episodes = sac.config.episodes_per_epoch();
    let mut curve = Vec::with_capacity(epochs);
    let warmup_episodes = sac.config.warmup_steps.div_ceil(sac.config.episode_steps.max(1));
    for e in 0..epochs {
        let random = warmup_episodes
            .saturating_sub((first_epoch + e) * episodes)
            .min(episodes);
        let mut stats = collect_epoch(sim, engine, &sac.actor, label, schedule, episodes, random, buffer, rng)?;
        let updates = (stats.steps as f64 * sac.config.updates_per_step).round() as usize;
        let mut loss = 0.0;
        let mut done = 0;
        for _ in 0..updates {
            if buffer.len() < sac.config.batch {
                break;
            }
            loss += sac.update(buffer, rng)?.critic_loss;
            done += 1;
        }
        sac.check_finite()?;
        stats.epoch = first_epoch + e;
        stats.alpha = sac.alpha();
        stats.critic_loss = if done > 0 { loss / done as f64 } else { 0.0 };
        curve.push(stats);
    }
    Ok(curve)
}

/// A single-skill training task.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertTask {
    pub gait: GaitType,
    pub weights: RewardWeights,
    pub reset: ResetMode,
}

impl ExpertTask {
    /// Preset weights; recovery starts fallen, gaits start standing.
    pub fn standard(gait: GaitType) -> Self {
        ExpertTask {
            gait,
            weights: RewardWeights::preset(gait),
            reset: if gait == GaitType::Recovery {
                ResetMode::RandomFall
            } else {
                ResetMode::Nominal
            },
        }
    }

    /// Orientation and height terms of the recovery preset, from a standing start.
    pub fn stand_probe() -> Self {
        ExpertTask {
            gait: GaitType::Recovery,
            weights: RewardWeights::stand_probe(),
            reset: ResetMode::Nominal,
        }
    }

    pub fn episode_config(&self, steps: usize) -> EpisodeConfig {
        EpisodeConfig {
            steps,
            reset: self.reset,
            task: Task::Single {
                gait: self.gait,
                weights: self.weights,
            },
        }
    }
}

pub fn one_hot_label(gait: GaitType) -> [f64; NUM_EXPERTS] {
    let mut w = [0.0; NUM_EXPERTS];
    w[gait.index()] = 1.0;
    w
}

#[derive(Clone, Debug)]
pub struct ExpertTraining {
    pub actor: GaussianActor,
    pub curve: Vec<EpochStats>,
}

pub fn train_expert(
    sim: &Simulator,
    engine: &RewardEngine,
    task: &ExpertTask,
    config: &SacConfig,
    epochs: usize,
    seed: u64,
) -> Result<ExpertTraining> {
    let mut sim = sim.clone();
    let offset = sim.config.nominal_hold_action(&sim.gains);
    let mut init = RngStream::new(seed, Stream::Init);
    let actor = GaussianActor::for_gait(task.gait, &config.actor_hidden, offset, &mut init)
        .with_initial_log_std(config.initial_log_std);
    let mut sac = Sac::new(actor, offset, config.clone(), &mut init)?;
    sac.limits = sim.config.limits;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, sac.actor.net.input_size());
    let mut schedule = FixedTask(task.episode_config(config.episode_steps));
    let mut rng = RngStream::new(seed, Stream::Replay);
    let curve = train_loop(
        &mut sac,
        &mut sim,
        engine,
        one_hot_label(task.gait),
        &mut schedule,
        &mut buffer,
        epochs,
        0,
        &mut rng,
    )?;
    Ok(ExpertTraining {
        actor: sac.actor,
        curve,
    })
}

/// Gating training state that can be advanced a few epochs at a time, as
/// the criteria search requires.
pub struct GatingTrainer {
    pub sac: Sac<CompositePolicy>,
    pub buffer: ReplayBuffer,
    pub sim: Simulator,
    pub engine: RewardEngine,
    pub reset: ResetMode,
    rng: RngStream,
    epochs_done: usize,
    expert_checksum: u64,
}

impl GatingTrainer {
    pub fn new(
        sim: &Simulator,
        engine: &RewardEngine,
        experts: ExpertSet,
        config: &SacConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut init = RngStream::new(seed, Stream::Init);
        let gating = GatingNetwork::new(&config.actor_hidden, &mut init);
        let expert_checksum = experts.checksum();
        let policy = CompositePolicy::new(experts, gating);
        let offset = sim.config.nominal_hold_action(&sim.gains);
        let mut sac = Sac::new(policy, offset, config.clone(), &mut init)?;
        sac.limits = sim.config.limits;
        Ok(GatingTrainer {
            buffer: ReplayBuffer::new(config.buffer_capacity, crate::observation::MULTI_DIM),
            sac,
            sim: sim.clone(),
            engine: engine.clone(),
            reset: ResetMode::Nominal,
            rng: RngStream::new(seed, Stream::Replay),
            epochs_done: 0,
            expert_checksum,
        })
    }

    pub fn policy(&self) -> &CompositePolicy {
        &self.sac.actor
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn train(&mut self, criteria: SwitchCriteria, epochs: usize) -> Result<Vec<EpochStats>> {
        criteria.validate()?;
        let mut schedule = RandomGoals {
            criteria,
            reset: self.reset,
            steps: self.sac.config.episode_steps,
        };
        let curve = train_loop(
            &mut self.sac,
            &mut self.sim,
            &self.engine,
            [0.0; NUM_EXPERTS],
            &mut schedule,
            &mut self.buffer,
            epochs,
            self.epochs_done,
            &mut self.rng,
        )?;
        self.epochs_done += epochs;
        if self.sac.actor.experts.checksum() != self.expert_checksum {
            return Err(Error::InvalidArgument(
                "expert parameters changed during gating training".into(),
            ));
        }
        Ok(curve)
    }
}

pub struct GatingTraining {
    pub policy: CompositePolicy,
    pub curve: Vec<EpochStats>,
}

pub fn train_gating(
    sim: &Simulator,
    engine: &RewardEngine,
    experts: ExpertSet,
    criteria: SwitchCriteria,
    config: &SacConfig,
    epochs: usize,
    seed: u64,
) -> Result<GatingTraining> {
    let mut trainer = GatingTrainer::new(sim, engine, experts, config, seed)?;
    let curve = trainer.train(criteria, epochs)?;
    Ok(GatingTraining {
        policy: trainer.sac.actor,
        curve,
    })
}

/// Learning curve CSV: epoch, returns, per-term means, goal reward sum.
pub fn write_learning_curve(curve: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_return,mean_step_reward");
    for name in RewardTerms::NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",goal_reward_sum,invalid_episodes,alpha,critic_loss\n");
    for s in curve {
        out.push_str(&format!("{},{:?},{:?}", s.epoch, s.mean_return, s.mean_step_reward));
        for t in s.term_means {
            out.push_str(&format!(",{t:?}"));
        }
        out.push_str(&format!(
            ",{:?},{},{:?},{:?}\n",
            s.goal_reward_sum, s.invalid_episodes, s.alpha, s.critic_loss
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Mean per-step reward of `source` over episodes seeded `0..episodes`.
pub fn evaluate_mean_step_reward(
    sim: &Simulator,
    engine: &RewardEngine,
    source: &mut dyn ActionSource,
    config: &EpisodeConfig,
    episodes: u64,
) -> Result<f64> {
    let mut sim = sim.clone();
    let mut total = 0.0;
    let mut steps = 0usize;
    for seed in 0..episodes {
        let traj = run_episode(&mut sim, engine, &mut *source, config, seed, EpisodeOptions::default())?;
        total += traj.total_reward();
        steps += traj.len();
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}
