//! Fixed-length episodes and the per-step records they produce.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorNet;
use crate::gait::{wrap_phase, GaitType};
use crate::geometry::{JointVector, Vec3};
use crate::observation::{expert_observation, multi_observation};
use crate::policy::{mean_action, sample_action, CompositePolicy, GaussianActor, NUM_EXPERTS};
use crate::reward::{select_reference_gait, Goal, RewardEngine, RewardTerms, RewardWeights, SwitchCriteria};
use crate::rng::{RngStream, Stream};
use crate::sim::{JointLimits, ResetMode, RobotState, Simulator, CONTROL_DT};

/// 10 s at 25 Hz.
pub const EPISODE_STEPS: usize = 250;

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    /// One skill rewarded with a preset; phase runs at that gait's frequency.
    Single { gait: GaitType, weights: RewardWeights },
    /// Goal tracking with distance-gated contact references.
    Multi { goal: Goal, criteria: SwitchCriteria },
}

impl Task {
    pub fn phase_gait(&self) -> GaitType {
        match self {
            Task::Single { gait, .. } => *gait,
            Task::Multi { .. } => GaitType::Recovery,
        }
    }

    pub fn goal(&self) -> Option<Goal> {
        match self {
            Task::Multi { goal, .. } => Some(*goal),
            Task::Single { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub reset: ResetMode,
    pub task: Task,
}

impl EpisodeConfig {
    pub fn new(task: Task, reset: ResetMode) -> Self {
        EpisodeConfig {
            steps: EPISODE_STEPS,
            reset,
            task,
        }
    }
}

/// What a policy sees each control step.
pub struct StepContext<'a> {
    pub obs: &'a [f64],
    pub state: &'a RobotState,
    pub task: &'a Task,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action: JointVector,
    pub weights: [f64; NUM_EXPERTS],
}

/// Anything that turns an observation into joint targets.
pub trait ActionSource {
    fn act(&mut self, ctx: &StepContext, rng: &mut RngStream) -> Result<PolicyOutput>;
}

impl<T: ActionSource + ?Sized> ActionSource for &mut T {
    fn act(&mut self, ctx: &StepContext, rng: &mut RngStream) -> Result<PolicyOutput> {
        (**self).act(ctx, rng)
    }
}

fn one_hot(gait: GaitType) -> [f64; NUM_EXPERTS] {
    let mut w = [0.0; NUM_EXPERTS];
    w[gait.index()] = 1.0;
    w
}

/// A single expert, sampled or run at its mean.
pub struct ExpertSource<'a> {
    pub actor: &'a GaussianActor,
    pub gait: GaitType,
    pub stochastic: bool,
    pub sim: &'a Simulator,
}

impl ActionSource for ExpertSource<'_> {
    fn act(&mut self, ctx: &StepContext, rng: &mut RngStream) -> Result<PolicyOutput> {
        let dist = self.actor.distribution(ctx.obs)?;
        let limits = &self.sim.config.limits;
        let action = if self.stochastic {
            sample_action(&dist, limits, rng).0
        } else {
            mean_action(&dist, limits)
        };
        Ok(PolicyOutput {
            action,
            weights: one_hot(self.gait),
        })
    }
}

pub struct CompositeSource<'a> {
    pub policy: &'a CompositePolicy,
    pub stochastic: bool,
    pub sim: &'a Simulator,
}

impl ActionSource for CompositeSource<'_> {
    fn act(&mut self, ctx: &StepContext, rng: &mut RngStream) -> Result<PolicyOutput> {
        let (dist, w) = self.policy.distribution(ctx.obs)?;
        let limits = &self.sim.config.limits;
        let action = if self.stochastic {
            sample_action(&dist, limits, rng).0
        } else {
            mean_action(&dist, limits)
        };
        Ok(PolicyOutput {
            action,
            weights: w
                .try_into()
                .map_err(|_| Error::InvalidArgument("gating width".into()))?,
        })
    }
}

/// Hard switching among experts by goal distance, with recovery taking over
/// whenever the body touches the ground. Runs each expert at its mean.
pub struct ManualSwitchSource<'a> {
    pub policy: &'a CompositePolicy,
    pub sim: &'a Simulator,
}

impl ManualSwitchSource<'_> {
    pub fn active_expert(state: &RobotState, goal: &Goal, criteria: &SwitchCriteria) -> Result<GaitType> {
        if state.body_contact {
            return Ok(GaitType::Recovery);
        }
        select_reference_gait(goal.distance(state), criteria)
    }
}

impl ActionSource for ManualSwitchSource<'_> {
    fn act(&mut self, ctx: &StepContext, _rng: &mut RngStream) -> Result<PolicyOutput> {
        let Task::Multi { goal, criteria } = ctx.task else {
            return Err(Error::InvalidArgument("manual switching needs a goal task".into()));
        };
        let gait = Self::active_expert(ctx.state, goal, criteria)?;
        let dists = self.policy.experts.distributions(ctx.obs)?;
        Ok(PolicyOutput {
            action: mean_action(&dists[gait.index()], &self.sim.config.limits),
            weights: one_hot(gait),
        })
    }
}

/// Uniform joint targets inside the limits.
#[derive(Clone, Copy, Debug)]
pub struct UniformRandomSource {
    pub limits: JointLimits,
}

impl UniformRandomSource {
    pub fn new(sim: &Simulator) -> Self {
        UniformRandomSource {
            limits: sim.config.limits,
        }
    }
}

impl ActionSource for UniformRandomSource {
    fn act(&mut self, _ctx: &StepContext, rng: &mut RngStream) -> Result<PolicyOutput> {
        let limits = &self.limits;
        Ok(PolicyOutput {
            action: std::array::from_fn(|j| {
                let [lo, hi] = limits.bounds(j);
                rng.random_range(lo..hi)
            }),
            weights: [1.0 / NUM_EXPERTS as f64; NUM_EXPERTS],
        })
    }
}

/// Fixed joint targets, e.g. the nominal hold pose.
pub struct ConstantSource {
    pub action: JointVector,
}

impl ActionSource for ConstantSource {
    fn act(&mut self, _ctx: &StepContext, _rng: &mut RngStream) -> Result<PolicyOutput> {
        Ok(PolicyOutput {
            action: self.action,
            weights: one_hot(GaitType::Recovery),
        })
    }
}

/// Open-loop trot: diagonal pairs alternately lift their feet by bending the
/// knee and swing the thigh forward around the hold pose.
pub struct ScriptedTrotSource {
    pub hold: JointVector,
    pub frequency: f64,
    pub lift: f64,
    pub stride: f64,
}

impl ActionSource for ScriptedTrotSource {
    fn act(&mut self, ctx: &StepContext, _rng: &mut RngStream) -> Result<PolicyOutput> {
        let phase = wrap_phase(ctx.state.time * self.frequency);
        let mut action = self.hold;
        for leg in 0..4 {
            // FR and RL swing together, FL and RR half a cycle later
            let offset = if leg == 0 || leg == 3 { 0.0 } else { 0.5 };
            let p = wrap_phase(phase + offset);
            let s = (2.0 * std::f64::consts::PI * p).sin();
            action[3 * leg + 1] += self.stride * s;
            if p < 0.5 {
                action[3 * leg + 2] -= self.lift * s;
            }
        }
        Ok(PolicyOutput {
            action,
            weights: one_hot(GaitType::Trot),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time of `state`, i.e. after the control step.
    pub t: f64,
    /// Observation the action was computed from.
    pub obs: Vec<f64>,
    pub action: JointVector,
    pub state: RobotState,
    pub reward: f64,
    pub reward_terms: BTreeMap<String, f64>,
    pub expert_weights: [f64; NUM_EXPERTS],
    pub ref_gait: GaitType,
    pub goal: [f64; 2],
    /// Goal reward when the task has a goal.
    pub r_g: f64,
    /// Heading-frame velocity fed to the policy (estimated or true).
    pub observed_velocity: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial_state: RobotState,
    pub steps: Vec<StepRecord>,
    /// False when the simulation blew up; `steps` then holds the partial run.
    pub valid: bool,
    /// Observation after the final step, for bootstrapping.
    pub final_obs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn goal_reward_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.r_g).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_reward() / self.steps.len() as f64
        }
    }
}

/// Optional per-episode hooks.
#[derive(Clone, Copy, Default)]
pub struct EpisodeOptions<'a> {
    /// Feed the policy estimated rather than true velocity.
    pub estimator: Option<&'a EstimatorNet>,
}

struct Observer<'a> {
    engine: &'a RewardEngine,
    task: &'a Task,
    estimator: Option<&'a EstimatorNet>,
    history: Vec<RobotState>,
}

impl Observer<'_> {
    fn push(&mut self, s: &RobotState) {
        if self.estimator.is_some() {
            if self.history.is_empty() {
                self.history = vec![s.clone(); 3];
            } else {
                self.history.rotate_right(1);
                self.history[0] = s.clone();
            }
        }
    }

    fn velocity(&self, s: &RobotState) -> Result<Vec3> {
        match self.estimator {
            Some(net) => {
                let v = net.estimate(&self.history)?;
                Ok(Vec3::new(v[0], v[1], v[2]))
            }
            None => Ok(s.lin_vel_heading()),
        }
    }

    fn observe(&self, s: &RobotState) -> Result<(Vec<f64>, Vec3)> {
        let v = self.velocity(s)?;
        let obs = match self.task {
            Task::Single { gait, .. } => expert_observation(s, *gait, Some(v)),
            Task::Multi { goal, .. } => multi_observation(s, goal, &self.engine.schedules, Some(v)).to_vec(),
        };
        Ok((obs, v))
    }
}

fn named_terms(terms: &RewardTerms) -> BTreeMap<String, f64> {
    RewardTerms::NAMES
        .iter()
        .zip(terms.to_array())
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Runs `config.steps` control steps from a fresh reset. Simulation and
/// sampling draws come from independent streams of `seed`.
pub fn run_episode(
    sim: &mut Simulator,
    engine: &RewardEngine,
    policy: &mut (impl ActionSource + ?Sized),
    config: &EpisodeConfig,
    seed: u64,
    options: EpisodeOptions,
) -> Result<Trajectory> {
    let mut sim_rng = RngStream::new(seed, Stream::Sim);
    let mut policy_rng = RngStream::new(seed, Stream::Policy);
    let initial = sim.reset(config.reset, &mut sim_rng);
    let mut state = initial.clone();
    let mut observer = Observer {
        engine,
        task: &config.task,
        estimator: options.estimator,
        history: Vec::new(),
    };
    observer.push(&state);
    let (mut obs, mut observed_v) = observer.observe(&state)?;
    let phase_gait = config.task.phase_gait();
    let frequency = engine.schedules.frequency(phase_gait);
    let goal_xy = config.task.goal().map(|g| [g.x, g.y]).unwrap_or([0.0, 0.0]);
    let mut steps = Vec::with_capacity(config.steps);
    let mut valid = true;

    for _ in 0..config.steps {
        let out = policy.act(
            &StepContext {
                obs: &obs,
                state: &state,
                task: &config.task,
            },
            &mut policy_rng,
        )?;
        let next = match sim.control_step(&state, &out.action, frequency) {
            Ok(mut s) => {
                s.phase = wrap_phase(s.time * frequency);
                s
            }
            Err(_) => {
                valid = false;
                break;
            }
        };
        if sim.is_blown_up(&next) {
            valid = false;
            break;
        }
        let (reward, reward_terms, ref_gait, r_g) = match &config.task {
            Task::Single { gait, weights } => {
                let (r, terms) = engine.single_skill_reward(&next, *gait, weights);
                (r, named_terms(&terms), *gait, 0.0)
            }
            Task::Multi { goal, criteria } => {
                let m = engine.multi_skill_reward(&next, goal, criteria)?;
                let mut named = named_terms(&m.terms);
                named.insert("r_g".into(), m.goal.r_g);
                named.insert("r_pg".into(), m.goal.r_pg);
                named.insert("r_vg".into(), m.goal.r_vg);
                named.insert("r_phig".into(), m.goal.r_phig);
                named.insert("r_f".into(), m.r_f);
                named.insert("r_e".into(), m.r_e);
                (m.total, named, m.reference_gait, m.goal.r_g)
            }
        };
        observer.push(&next);
        let (next_obs, next_v) = observer.observe(&next)?;
        steps.push(StepRecord {
            t: next.time,
            obs: std::mem::replace(&mut obs, next_obs),
            action: out.action,
            state: next.clone(),
            reward,
            reward_terms,
            expert_weights: out.weights,
            ref_gait,
            goal: goal_xy,
            r_g,
            observed_velocity: std::mem::replace(&mut observed_v, next_v),
        });
        state = next;
    }
    Ok(Trajectory {
        initial_state: initial,
        steps,
        valid,
        final_obs: obs,
    })
}

/// Times at which consecutive records are spaced; used by tests and exports.
pub fn control_times(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(|k| k as f64 * CONTROL_DT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::TaskReferences;

    fn setup() -> (Simulator, RewardEngine) {
        let sim = Simulator::default();
        let engine = RewardEngine::new(TaskReferences::for_sim(&sim.config), Default::default());
        (sim, engine)
    }

    #[test]
    fn full_episode_has_250_steps_at_25_hz() {
        let (mut sim, engine) = setup();
        let hold = sim.config.nominal_hold_action(&sim.gains);
        let cfg = EpisodeConfig::new(
            Task::Single {
                gait: GaitType::Recovery,
                weights: RewardWeights::RECOVERY,
            },
            ResetMode::Nominal,
        );
        let traj = run_episode(
            &mut sim,
            &engine,
            &mut ConstantSource { action: hold },
            &cfg,
            3,
            Default::default(),
        )
        .unwrap();
        assert!(traj.valid);
        assert_eq!(traj.len(), EPISODE_STEPS);
        let mut prev = 0.0;
        for (rec, t) in traj.steps.iter().zip(control_times(EPISODE_STEPS)) {
            assert!(rec.t > prev);
            assert!((rec.t - t).abs() < 1e-9);
            prev = rec.t;
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let (mut sim, engine) = setup();
        let mut cfg = EpisodeConfig::new(
            Task::Multi {
                goal: Goal::at(3.0, 0.0),
                criteria: SwitchCriteria::default(),
            },
            ResetMode::Nominal,
        );
        cfg.steps = 0;
        let traj = run_episode(
            &mut sim,
            &engine,
            &mut UniformRandomSource::new(&Simulator::default()),
            &cfg,
            1,
            Default::default(),
        )
        .unwrap();
        assert!(traj.is_empty() && traj.valid);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (mut sim, engine) = setup();
        let cfg = EpisodeConfig::new(
            Task::Multi {
                goal: Goal::at(-4.0, 2.0),
                criteria: SwitchCriteria::default(),
            },
            ResetMode::RandomFall,
        );
        let probe = Simulator::default();
        let a = run_episode(
            &mut sim,
            &engine,
            &mut UniformRandomSource::new(&probe),
            &cfg,
            11,
            Default::default(),
        )
        .unwrap();
        let b = run_episode(
            &mut sim,
            &engine,
            &mut UniformRandomSource::new(&probe),
            &cfg,
            11,
            Default::default(),
        )
        .unwrap();
        assert_eq!(a.steps, b.steps);
        let c = run_episode(
            &mut sim,
            &engine,
            &mut UniformRandomSource::new(&probe),
            &cfg,
            12,
            Default::default(),
        )
        .unwrap();
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn goal_task_records_reference_gait_and_goal() {
        let (mut sim, engine) = setup();
        let hold = sim.config.nominal_hold_action(&sim.gains);
        let criteria = SwitchCriteria::new(2.0, 5.0).unwrap();
        let cfg = EpisodeConfig {
            steps: 5,
            reset: ResetMode::Nominal,
            task: Task::Multi {
                goal: Goal::at(6.0, 0.0),
                criteria,
            },
        };
        let traj = run_episode(
            &mut sim,
            &engine,
            &mut ConstantSource { action: hold },
            &cfg,
            0,
            Default::default(),
        )
        .unwrap();
        for rec in &traj.steps {
            assert_eq!(rec.ref_gait, GaitType::Gallop);
            assert_eq!(rec.goal, [6.0, 0.0]);
            assert_eq!(rec.reward_terms["r_g"], rec.r_g);
        }
    }

    #[test]
    fn blow_up_returns_partial_invalid_trajectory() {
        let (mut sim, engine) = setup();
        sim.config.max_joint_speed = 1e-6;
        let cfg = EpisodeConfig::new(
            Task::Single {
                gait: GaitType::Trot,
                weights: RewardWeights::GAITS,
            },
            ResetMode::Nominal,
        );
        let probe = Simulator::default();
        let traj = run_episode(
            &mut sim,
            &engine,
            &mut UniformRandomSource::new(&probe),
            &cfg,
            0,
            Default::default(),
        )
        .unwrap();
        assert!(!traj.valid);
        assert!(traj.len() < EPISODE_STEPS);
    }
}
