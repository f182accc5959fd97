//! Radial-basis reward terms for single skills, the goal-tracking reward and
//! the distance-gated multi-skill reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{GaitSchedules, GaitType};
use crate::geometry::{Vec3, NUM_LEGS};
use crate::sim::{RobotState, SimConfig};

pub const ALPHA_ORIENTATION: f64 = -2.35;
pub const ALPHA_HEIGHT: f64 = -51.16;
pub const ALPHA_VELOCITY: f64 = -18.42;
pub const ALPHA_TORQUE: f64 = -0.004;
pub const ALPHA_JOINT_VELOCITY: f64 = -0.032;
pub const ALPHA_FOOT_PLACEMENT: f64 = -51.16;
pub const ALPHA_SWING_STANCE: f64 = -460.50;
pub const ALPHA_YAW_RATE: f64 = -7.47;
pub const ALPHA_GOAL_POSITION: f64 = -0.74;
pub const ALPHA_GOAL_HEADING: f64 = -2.35;

/// Speed cap for the velocity-squared terms, m/s.
pub const SPEED_CAP: f64 = 5.0;
/// Upper bound on goal distances and switch criteria, m.
pub const MAX_GOAL_DISTANCE: f64 = 15.0;
/// Maximum of the goal-tracking reward with the speed term scaled to [0, 1].
pub const GOAL_REWARD_MAX: f64 = 16.0;
/// Group weights of the multi-skill reward: goal, contact, everything else.
pub const GROUP_WEIGHTS: [f64; 3] = [0.6, 0.2, 0.2];

/// `exp(α ‖x̂ − x‖²)`.
pub fn rbf(x: &[f64], x_hat: &[f64], alpha: f64) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: x_hat.len(),
            actual: x.len(),
        });
    }
    if !(alpha < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rbf shape parameter must be negative, got {alpha}"
        )));
    }
    let sq: f64 = x.iter().zip(x_hat).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok((alpha * sq).exp())
}

pub fn rbf_scalar(x: f64, x_hat: f64, alpha: f64) -> f64 {
    (alpha * (x_hat - x) * (x_hat - x)).exp()
}

fn rbf_vec3(x: Vec3, x_hat: Vec3, alpha: f64) -> f64 {
    (alpha * (x_hat - x).norm_squared()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub orientation: f64,
    pub height: f64,
    pub velocity: f64,
    pub torque: f64,
    pub joint_velocity: f64,
    pub body_ground: f64,
    pub foot_ground: f64,
    pub foot_placement: f64,
    pub swing_stance: f64,
    pub yaw_rate: f64,
    pub contact: f64,
}

impl RewardWeights {
    pub const RECOVERY: RewardWeights = RewardWeights {
        orientation: 0.189,
        height: 0.189,
        velocity: 0.114,
        torque: 0.076,
        joint_velocity: 0.076,
        body_ground: 0.083,
        foot_ground: 0.083,
        foot_placement: 0.189,
        swing_stance: 0.0,
        yaw_rate: 0.0,
        contact: 0.0,
    };

    pub const GAITS: RewardWeights = RewardWeights {
        orientation: 0.068,
        height: 0.068,
        velocity: 0.170,
        torque: 0.017,
        joint_velocity: 0.017,
        body_ground: 0.048,
        foot_ground: 0.0,
        foot_placement: 0.034,
        swing_stance: 0.034,
        yaw_rate: 0.068,
        contact: 0.476,
    };

    pub fn preset(gait: GaitType) -> RewardWeights {
        match gait {
            GaitType::Recovery => Self::RECOVERY,
            _ => Self::GAITS,
        }
    }

    /// Only the orientation and height terms of the recovery row.
    pub fn stand_probe() -> RewardWeights {
        RewardWeights {
            orientation: Self::RECOVERY.orientation,
            height: Self::RECOVERY.height,
            ..RewardWeights::zero()
        }
    }

    pub fn zero() -> RewardWeights {
        RewardWeights::from_array([0.0; 11])
    }

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.orientation,
            self.height,
            self.velocity,
            self.torque,
            self.joint_velocity,
            self.body_ground,
            self.foot_ground,
            self.foot_placement,
            self.swing_stance,
            self.yaw_rate,
            self.contact,
        ]
    }

    pub fn from_array(a: [f64; 11]) -> RewardWeights {
        RewardWeights {
            orientation: a[0],
            height: a[1],
            velocity: a[2],
            torque: a[3],
            joint_velocity: a[4],
            body_ground: a[5],
            foot_ground: a[6],
            foot_placement: a[7],
            swing_stance: a[8],
            yaw_rate: a[9],
            contact: a[10],
        }
    }

    pub fn sum(&self) -> f64 {
        self.to_array().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("reward weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Reference quantities the RBF terms are measured against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskReferences {
    /// Target base height ĥ, m.
    pub base_height: f64,
    /// Desired forward speed in the heading frame per gait, indexed like
    /// [`GaitType::ALL`]; the gallop entry is unused.
    pub velocity: [f64; 5],
    /// Reference swing foot height, m.
    pub swing_height: f64,
    /// Nominal foot positions in the base frame, order FR, FL, RR, RL.
    pub nominal_feet: [[f64; 3]; NUM_LEGS],
}

impl TaskReferences {
    pub fn for_sim(cfg: &SimConfig) -> Self {
        let q = cfg.nominal_joints();
        TaskReferences {
            base_height: cfg.nominal_height,
            velocity: [0.0, 0.8, 0.8, 1.5, 0.0],
            swing_height: 0.09,
            nominal_feet: std::array::from_fn(|leg| {
                cfg.legs
                    .forward_kinematics(leg, crate::geometry::leg_joints(&q, leg))
                    .to_array()
            }),
        }
    }

    pub fn desired_velocity(&self, gait: GaitType) -> f64 {
        self.velocity[gait.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_height > 0.0) {
            return Err(Error::Config("reward.base_height must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for TaskReferences {
    fn default() -> Self {
        TaskReferences::for_sim(&SimConfig::default())
    }
}

/// Thresholds on goal distance gating the reference gait.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchCriteria {
    pub x1: f64,
    pub x2: f64,
}

impl SwitchCriteria {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        let c = SwitchCriteria { x1, x2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let SwitchCriteria { x1, x2 } = *self;
        if 0.0 <= x1 && x1 < x2 && x2 <= MAX_GOAL_DISTANCE {
            Ok(())
        } else {
            Err(Error::InvalidCriteria { x1, x2 })
        }
    }
}

impl Default for SwitchCriteria {
    fn default() -> Self {
        SwitchCriteria { x1: 2.0, x2: 5.0 }
    }
}

/// Fixed goal on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub x: f64,
    pub y: f64,
}

impl Goal {
    /// Goal at distance `d` and bearing `theta` from the world origin.
    pub fn polar(d: f64, theta: f64) -> Result<Self> {
        if !(0.0..=MAX_GOAL_DISTANCE).contains(&d) {
            return Err(Error::InvalidArgument(format!("goal distance {d} outside [0, 15]")));
        }
        if !(theta > -std::f64::consts::PI - 1e-12 && theta <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "goal bearing {theta} outside (-pi, pi]"
            )));
        }
        Ok(Goal {
            x: d * theta.cos(),
            y: d * theta.sin(),
        })
    }

    pub fn at(x: f64, y: f64) -> Self {
        Goal { x, y }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    /// Horizontal distance from the robot base.
    pub fn distance(&self, state: &RobotState) -> f64 {
        (self.position() - state.base_position.horizontal()).horizontal().norm()
    }
}

/// Raw (unweighted) values of the eleven single-skill terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub orientation: f64,
    pub height: f64,
    pub velocity: f64,
    pub torque: f64,
    pub joint_velocity: f64,
    pub body_ground: f64,
    pub foot_ground: f64,
    pub foot_placement: f64,
    pub swing_stance: f64,
    pub yaw_rate: f64,
    pub contact: f64,
}

impl RewardTerms {
    pub const NAMES: [&'static str; 11] = [
        "orientation",
        "height",
        "velocity",
        "torque",
        "joint_velocity",
        "body_ground",
        "foot_ground",
        "foot_placement",
        "swing_stance",
        "yaw_rate",
        "contact",
    ];

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.orientation,
            self.height,
            self.velocity,
            self.torque,
            self.joint_velocity,
            self.body_ground,
            self.foot_ground,
            self.foot_placement,
            self.swing_stance,
            self.yaw_rate,
            self.contact,
        ]
    }

    /// Per-term weighted contribution.
    pub fn contributions(&self, w: &RewardWeights) -> [f64; 11] {
        let t = self.to_array();
        let w = w.to_array();
        std::array::from_fn(|i| t[i] * w[i])
    }

    pub fn weighted_sum(&self, w: &RewardWeights) -> f64 {
        self.contributions(w).iter().sum()
    }
}

/// Fraction of feet whose stance flag matches the reference.
pub fn contact_match_reward(actual: &[bool; NUM_LEGS], reference: &[bool; NUM_LEGS]) -> f64 {
    let hits = actual.iter().zip(reference).filter(|(a, r)| a == r).count();
    hits as f64 / NUM_LEGS as f64
}

/// Trot below `x1`, bound on `[x1, x2)`, gallop from `x2` on.
pub fn select_reference_gait(d: f64, criteria: &SwitchCriteria) -> Result<GaitType> {
    criteria.validate()?;
    let d = d.abs();
    Ok(if d < criteria.x1 {
        GaitType::Trot
    } else if d < criteria.x2 {
        GaitType::Bound
    } else {
        GaitType::Gallop
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalReward {
    pub r_g: f64,
    pub r_pg: f64,
    pub r_vg: f64,
    pub r_phig: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSkillReward {
    pub total: f64,
    pub goal: GoalReward,
    /// Contact match against the distance-selected reference gait.
    pub r_f: f64,
    /// Normalized weighted sum of the other gait-preset terms.
    pub r_e: f64,
    pub reference_gait: GaitType,
    pub distance: f64,
    pub terms: RewardTerms,
}

/// Reward evaluation with a fixed set of references and gait schedules.
#[derive(Clone, Debug, Default)]
pub struct RewardEngine {
    pub refs: TaskReferences,
    pub schedules: GaitSchedules,
}

impl RewardEngine {
    pub fn new(refs: TaskReferences, schedules: GaitSchedules) -> Self {
        RewardEngine { refs, schedules }
    }

    /// Phase of `gait`'s clock at the state's time.
    pub fn gait_phase(&self, gait: GaitType, state: &RobotState) -> f64 {
        crate::gait::wrap_phase(state.time * self.schedules.frequency(gait))
    }

    /// All eleven raw terms for `gait`. The contact term uses `contact_gait`'s
    /// schedule at its own clock phase (zero for recovery).
    pub fn terms(&self, state: &RobotState, gait: GaitType, contact_gait: GaitType) -> RewardTerms {
        let refs = &self.refs;
        let g = state.gravity_in_base();
        let orientation = rbf_vec3(g, Vec3::new(0.0, 0.0, -1.0), ALPHA_ORIENTATION);
        let height = rbf_scalar(state.height(), refs.base_height, ALPHA_HEIGHT);

        let v_heading = state.lin_vel_heading();
        let velocity = match gait {
            GaitType::Gallop => v_heading.x.clamp(0.0, SPEED_CAP).powi(2),
            _ => rbf_vec3(
                v_heading,
                Vec3::new(refs.desired_velocity(gait), 0.0, 0.0),
                ALPHA_VELOCITY,
            ),
        };
        let torque = (ALPHA_TORQUE * sq_norm(&state.last_torques)).exp();
        let joint_velocity = (ALPHA_JOINT_VELOCITY * sq_norm(&state.joint_vel)).exp();
        let body_ground = if state.body_contact { 0.0 } else { 1.0 };
        let foot_ground = if state.foot_contact.iter().any(|c| *c) {
            1.0
        } else {
            0.0
        };

        let foot_placement = if gait == GaitType::Recovery {
            let feet = state.foot_pos_base();
            let sq: f64 = (0..NUM_LEGS)
                .map(|i| (feet[i] - Vec3::from_array(refs.nominal_feet[i])).norm_squared())
                .sum();
            (ALPHA_FOOT_PLACEMENT * sq).exp()
        } else {
            let mean = state
                .foot_pos_world
                .iter()
                .fold(Vec3::ZERO, |acc, p| acc + *p)
                .scale(1.0 / NUM_LEGS as f64);
            rbf_vec3(
                mean.horizontal(),
                state.base_position.horizontal(),
                ALPHA_FOOT_PLACEMENT,
            )
        };

        let swing_sq: f64 = (0..NUM_LEGS)
            .map(|i| {
                let speed = state.foot_vel_world[i].horizontal().norm();
                let h = state.foot_heights[i].max(0.0);
                ((refs.swing_height - h) * speed).powi(2)
            })
            .sum();
        let swing_stance = (ALPHA_SWING_STANCE * swing_sq).exp();
        let yaw_rate = rbf_scalar(state.base_ang_vel.z, 0.0, ALPHA_YAW_RATE);

        let contact = match self.schedules.pattern(contact_gait) {
            Ok(p) => contact_match_reward(&state.foot_contact, &p.contacts(self.gait_phase(contact_gait, state))),
            Err(_) => 0.0,
        };

        RewardTerms {
            orientation,
            height,
            velocity,
            torque,
            joint_velocity,
            body_ground,
            foot_ground,
            foot_placement,
            swing_stance,
            yaw_rate,
            contact,
        }
    }

    pub fn single_skill_reward(
        &self,
        state: &RobotState,
        gait: GaitType,
        weights: &RewardWeights,
    ) -> (f64, RewardTerms) {
        let terms = self.terms(state, gait, gait);
        (terms.weighted_sum(weights), terms)
    }

    pub fn goal_reward(&self, state: &RobotState, goal: &Goal) -> GoalReward {
        let to_goal = (goal.position() - state.base_position).horizontal();
        let dist = to_goal.norm();
        let r_pg = (ALPHA_GOAL_POSITION * dist * dist).exp();
        let (r_vg, r_phig) = if dist < 0.01 {
            (0.0, 1.0)
        } else {
            let u = to_goal.scale(1.0 / dist);
            let v = state.base_lin_vel.horizontal().dot(u).clamp(0.0, SPEED_CAP);
            let u_base = state.base_orientation.rotate_inverse(u);
            ((v / SPEED_CAP).powi(2), rbf_vec3(u_base, Vec3::X, ALPHA_GOAL_HEADING))
        };
        let r_hz = rbf_scalar(state.height(), self.refs.base_height, ALPHA_HEIGHT);
        let r_phi = rbf_vec3(state.gravity_in_base(), Vec3::new(0.0, 0.0, -1.0), ALPHA_ORIENTATION);
        GoalReward {
            r_g: r_hz * r_phi * (8.0 * r_pg + 4.0 * r_vg + 4.0 * r_phig),
            r_pg,
            r_vg,
            r_phig,
        }
    }

    pub fn multi_skill_reward(
        &self,
        state: &RobotState,
        goal: &Goal,
        criteria: &SwitchCriteria,
    ) -> Result<MultiSkillReward> {
        let distance = goal.distance(state);
        let reference_gait = select_reference_gait(distance, criteria)?;
        let goal_r = self.goal_reward(state, goal);
        let mut terms = self.terms(state, reference_gait, reference_gait);
        if reference_gait == GaitType::Gallop {
            terms.velocity /= SPEED_CAP * SPEED_CAP;
        }
        let r_f = terms.contact;
        let mut others = RewardWeights::GAITS;
        others.contact = 0.0;
        let r_e = terms.weighted_sum(&others) / others.sum();
        let [wg, wf, we] = GROUP_WEIGHTS;
        Ok(MultiSkillReward {
            total: wg * goal_r.r_g / GOAL_REWARD_MAX + wf * r_f + we * r_e,
            goal: goal_r,
            r_f,
            r_e,
            reference_gait,
            distance,
            terms,
        })
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Single-skill reward with default references and schedules.
pub fn single_skill_reward(
    state: &RobotState,
    gait: GaitType,
    refs: &TaskReferences,
    weights: &RewardWeights,
) -> (f64, RewardTerms) {
    RewardEngine::new(refs.clone(), GaitSchedules::default()).single_skill_reward(state, gait, weights)
}

pub fn goal_reward(state: &RobotState, goal: &Goal, refs: &TaskReferences) -> GoalReward {
    RewardEngine::new(refs.clone(), GaitSchedules::default()).goal_reward(state, goal)
}

pub fn multi_skill_reward(
    state: &RobotState,
    goal: &Goal,
    criteria: &SwitchCriteria,
    refs: &TaskReferences,
) -> Result<MultiSkillReward> {
    RewardEngine::new(refs.clone(), GaitSchedules::default()).multi_skill_reward(state, goal, criteria)
}
