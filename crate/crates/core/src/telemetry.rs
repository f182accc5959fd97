//! Live steering session: owns a simulator and a policy, applies operator
//! commands between control steps and emits one [`TelemetryFrame`] per step.
//!
//! The wire format is JSON text. Every outbound frame carries `"v": 1`;
//! inbound commands may omit `v` but must not carry any other version.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::episode::{
    ActionSource, CompositeSource, ConstantSource, ManualSwitchSource, PolicyOutput, StepContext, Task,
};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorNet, HISTORY_LEN};
use crate::gait::{wrap_phase, GaitType};
use crate::geometry::{heading_to_world, world_to_heading, JointVector, Vec3, NUM_LEGS};
use crate::observation::multi_observation;
use crate::policy::{CompositePolicy, NUM_EXPERTS};
use crate::reward::{select_reference_gait, Goal, RewardEngine, SwitchCriteria, MAX_GOAL_DISTANCE};
use crate::rng::{RngStream, Stream};
use crate::sim::{ResetMode, RobotState, Simulator, CONTROL_DT};

pub const WIRE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub v: u32,
    /// Session time; advances by one control period per frame, across resets.
    pub t: f64,
    pub base_pos: [f64; 3],
    pub base_quat: [f64; 4],
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
    /// Horizontal speed in the heading frame.
    pub true_speed: f64,
    pub estimated_speed: f64,
    pub true_velocity: [f64; 3],
    pub estimated_velocity: [f64; 3],
    pub expert_weights: [f64; NUM_EXPERTS],
    pub active_expert: GaitType,
    pub ref_gait: GaitType,
    pub contacts: [bool; NUM_LEGS],
    pub body_contact: bool,
    /// Goal position relative to the torso, heading frame, metres.
    pub goal_offset: [f64; 2],
    /// Last accepted `set_goal` command, normalized.
    pub goal_command: [f64; 2],
    pub goal_world: [f64; 2],
    pub resets: u64,
}

impl TelemetryFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame fields are always serializable")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Normalized heading-frame offset, each component in [-1, 1].
    SetGoal([f64; 2]),
    /// Torso impulse in N·s, world frame.
    Push([f64; 3]),
    Reset,
}

fn float_array<const N: usize>(value: &Value, key: &str) -> Result<[f64; N]> {
    let bad = || Error::InvalidArgument(format!("`{key}` must be an array of {N} finite numbers"));
    let items = value.as_array().ok_or_else(bad)?;
    if items.len() != N {
        return Err(bad());
    }
    let mut out = [0.0; N];
    for (o, item) in out.iter_mut().zip(items) {
        *o = item.as_f64().filter(|x| x.is_finite()).ok_or_else(bad)?;
    }
    Ok(out)
}

impl Command {
    pub fn parse(text: &str) -> Result<Command> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("not JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidArgument("command must be a JSON object".into()))?;
        if let Some(v) = obj.get("v") {
            if v.as_u64() != Some(WIRE_VERSION as u64) {
                return Err(Error::InvalidArgument(format!("unsupported message version {v}")));
            }
        }
        let mut keys = obj.keys().filter(|k| k.as_str() != "v");
        let (Some(key), None) = (keys.next(), keys.next()) else {
            return Err(Error::InvalidArgument(
                "command needs exactly one of set_goal, push, reset".into(),
            ));
        };
        let body = &obj[key];
        match key.as_str() {
            "set_goal" => {
                let g = float_array::<2>(body, key)?;
                if g.iter().any(|x| x.abs() > 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "set_goal components {g:?} outside [-1, 1]"
                    )));
                }
                Ok(Command::SetGoal(g))
            }
            "push" => Ok(Command::Push(float_array::<3>(body, key)?)),
            "reset" => match body {
                Value::Null | Value::Bool(true) => Ok(Command::Reset),
                Value::Object(m) if m.is_empty() => Ok(Command::Reset),
                _ => Err(Error::InvalidArgument("reset takes no arguments".into())),
            },
            other => Err(Error::InvalidArgument(format!("unknown command `{other}`"))),
        }
    }

    pub fn to_json(&self) -> String {
        let body = match self {
            Command::SetGoal(g) => serde_json::json!({ "v": WIRE_VERSION, "set_goal": g }),
            Command::Push(f) => serde_json::json!({ "v": WIRE_VERSION, "push": f }),
            Command::Reset => serde_json::json!({ "v": WIRE_VERSION, "reset": {} }),
        };
        body.to_string()
    }
}

/// Controller driving the session.
#[derive(Clone, Debug)]
pub enum SessionPolicy {
    Composite {
        policy: CompositePolicy,
        stochastic: bool,
    },
    ManualSwitch(CompositePolicy),
    /// Fixed joint targets; useful without trained weights.
    Hold(JointVector),
}

pub struct SteeringSession {
    sim: Simulator,
    engine: RewardEngine,
    policy: SessionPolicy,
    criteria: SwitchCriteria,
    estimator: Option<EstimatorNet>,
    reset_mode: ResetMode,
    sim_rng: RngStream,
    policy_rng: RngStream,
    state: RobotState,
    history: Vec<RobotState>,
    goal: Goal,
    goal_command: [f64; 2],
    frames: u64,
    resets: u64,
}

impl SteeringSession {
    pub fn new(
        sim: Simulator,
        engine: RewardEngine,
        policy: SessionPolicy,
        criteria: SwitchCriteria,
        seed: u64,
    ) -> Result<Self> {
        criteria.validate()?;
        let mut session = SteeringSession {
            state: sim.reset(ResetMode::Nominal, &mut RngStream::new(seed, Stream::Sim)),
            sim,
            engine,
            policy,
            criteria,
            estimator: None,
            reset_mode: ResetMode::Nominal,
            sim_rng: RngStream::new(seed, Stream::Sim),
            policy_rng: RngStream::new(seed, Stream::Policy),
            history: Vec::new(),
            goal: Goal::at(0.0, 0.0),
            goal_command: [0.0, 0.0],
            frames: 0,
            resets: 0,
        };
        session.reset();
        session.resets = 0;
        Ok(session)
    }

    pub fn with_estimator(mut self, estimator: EstimatorNet) -> Self {
        self.estimator = Some(estimator);
        self
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn goal(&self) -> Goal {
        self.goal
    }

    pub fn criteria(&self) -> SwitchCriteria {
        self.criteria
    }

    pub fn time(&self) -> f64 {
        self.frames as f64 * CONTROL_DT
    }

    fn sync_phase(&self, s: &mut RobotState) {
        s.phase = wrap_phase(s.time * self.engine.schedules.frequency(GaitType::Recovery));
    }

    fn place_goal(&mut self, command: [f64; 2]) {
        let offset = Vec3::new(command[0] * MAX_GOAL_DISTANCE, command[1] * MAX_GOAL_DISTANCE, 0.0);
        let world = heading_to_world(offset, self.state.yaw());
        self.goal = Goal::at(
            self.state.base_position.x + world.x,
            self.state.base_position.y + world.y,
        );
        self.goal_command = command;
    }

    /// Fresh start; the last goal command is re-applied from the new pose.
    pub fn reset(&mut self) {
        let mut s = self.sim.reset(self.reset_mode, &mut self.sim_rng);
        self.sync_phase(&mut s);
        self.state = s;
        self.history.clear();
        self.resets += 1;
        self.place_goal(self.goal_command);
    }

    pub fn apply(&mut self, command: &Command) {
        match *command {
            Command::SetGoal(g) => self.place_goal(g),
            Command::Push(f) => self.sim.apply_impulse(&mut self.state, Vec3::from_array(f)),
            Command::Reset => self.reset(),
        }
    }

    fn push_history(&mut self) {
        if self.estimator.is_none() {
            return;
        }
        if self.history.is_empty() {
            self.history = vec![self.state.clone(); HISTORY_LEN];
        } else {
            self.history.rotate_right(1);
            self.history[0] = self.state.clone();
        }
    }

    fn velocities(&self) -> Result<(Vec3, Vec3)> {
        let truth = self.state.lin_vel_heading();
        let est = match &self.estimator {
            Some(net) => Vec3::from_array(net.estimate(&self.history)?),
            None => truth,
        };
        Ok((truth, est))
    }

    fn act(&mut self, obs: &[f64]) -> Result<PolicyOutput> {
        let task = Task::Multi {
            goal: self.goal,
            criteria: self.criteria,
        };
        let ctx = StepContext {
            obs,
            state: &self.state,
            task: &task,
        };
        let rng = &mut self.policy_rng;
        match &self.policy {
            SessionPolicy::Composite { policy, stochastic } => CompositeSource {
                policy,
                stochastic: *stochastic,
                sim: &self.sim,
            }
            .act(&ctx, rng),
            SessionPolicy::ManualSwitch(policy) => ManualSwitchSource { policy, sim: &self.sim }.act(&ctx, rng),
            SessionPolicy::Hold(action) => ConstantSource { action: *action }.act(&ctx, rng),
        }
    }

    /// Applies `commands` in order, advances one control step and reports the
    /// resulting state. A diverged simulation is reset rather than stopped.
    pub fn step(&mut self, commands: impl IntoIterator<Item = Command>) -> Result<TelemetryFrame> {
        for c in commands {
            self.apply(&c);
        }
        if self.history.is_empty() {
            self.push_history();
        }
        let (_, v_est) = self.velocities()?;
        let obs = multi_observation(&self.state, &self.goal, &self.engine.schedules, Some(v_est));
        let out = self.act(&obs)?;
        let frequency = self.engine.schedules.frequency(GaitType::Recovery);
        match self.sim.control_step(&self.state, &out.action, frequency) {
            Ok(mut next) if !self.sim.is_blown_up(&next) => {
                self.sync_phase(&mut next);
                self.state = next;
                self.push_history();
            }
            _ => {
                self.reset();
                self.push_history();
            }
        }
        self.frames += 1;
        self.frame(out.weights)
    }

    fn frame(&self, weights: [f64; NUM_EXPERTS]) -> Result<TelemetryFrame> {
        let s = &self.state;
        let (truth, est) = self.velocities()?;
        let (roll, pitch) = s.base_orientation.roll_pitch();
        let yaw = s.yaw();
        let rel = Vec3::new(self.goal.x - s.base_position.x, self.goal.y - s.base_position.y, 0.0);
        let offset = world_to_heading(rel, yaw);
        let d = rel.norm().min(MAX_GOAL_DISTANCE);
        let active = weights
            .iter()
            .enumerate()
            .fold(0, |best, (i, w)| if *w > weights[best] { i } else { best });
        Ok(TelemetryFrame {
            v: WIRE_VERSION,
            t: self.time(),
            base_pos: s.base_position.to_array(),
            base_quat: s.base_orientation.to_array(),
            yaw,
            roll,
            pitch,
            true_speed: truth.horizontal().norm(),
            estimated_speed: est.horizontal().norm(),
            true_velocity: truth.to_array(),
            estimated_velocity: est.to_array(),
            expert_weights: weights,
            active_expert: GaitType::ALL[active],
            ref_gait: select_reference_gait(d, &self.criteria)?,
            contacts: s.foot_contact,
            body_contact: s.body_contact,
            goal_offset: [offset.x, offset.y],
            goal_command: self.goal_command,
            goal_world: [self.goal.x, self.goal.y],
            resets: self.resets,
        })
    }
}
