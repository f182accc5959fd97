//! Floating-base quadruped with massless legs, point feet and penalty contact.
//!
//! The torso carries all of the mass. Each joint has a reflected rotor
//! inertia and is driven by the PD torque plus the reaction `Jᵀ F` of the
//! ground force acting on its foot. Integration is semi-implicit Euler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::advance_phase;
use crate::geometry::{gravity_in_base, leg_joints, JointVector, LegGeometry, Quaternion, Vec3, NUM_JOINTS, NUM_LEGS};

/// Policy period: 25 Hz.
pub const CONTROL_DT: f64 = 0.04;
/// PD / physics period: 1000 Hz.
pub const PHYSICS_DT: f64 = 0.001;
pub const SUBSTEPS_PER_CONTROL: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N·s/m.
    pub damping: f64,
    pub friction: f64,
    /// Tangential viscous coefficient before the Coulomb cap, N·s/m.
    pub tangential: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            stiffness: 5000.0,
            damping: 50.0,
            friction: 0.6,
            tangential: 1000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLimits {
    /// (lower, upper) for hip-roll, hip-pitch, knee.
    pub hip_roll: [f64; 2],
    pub hip_pitch: [f64; 2],
    pub knee: [f64; 2],
}

impl Default for JointLimits {
    fn default() -> Self {
        JointLimits {
            hip_roll: [-0.8, 0.8],
            hip_pitch: [-1.0, 3.9],
            knee: [-2.7, -0.9],
        }
    }
}

impl JointLimits {
    pub fn bounds(&self, joint: usize) -> [f64; 2] {
        match joint % 3 {
            0 => self.hip_roll,
            1 => self.hip_pitch,
            _ => self.knee,
        }
    }

    pub fn clamp(&self, q: &JointVector) -> JointVector {
        std::array::from_fn(|j| {
            let [lo, hi] = self.bounds(j);
            q[j].clamp(lo, hi)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGains {
    pub kp: JointVector,
    pub kd: JointVector,
    pub torque_limit: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        PdGains::uniform(40.0, 1.0, 33.5)
    }
}

impl PdGains {
    pub fn uniform(kp: f64, kd: f64, torque_limit: f64) -> Self {
        PdGains {
            kp: [kp; NUM_JOINTS],
            kd: [kd; NUM_JOINTS],
            torque_limit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kp.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config("pd.kp must be > 0".into()));
        }
        if self.kd.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::Config("pd.kd must be >= 0".into()));
        }
        if !(self.torque_limit > 0.0) {
            return Err(Error::Config("pd.torque_limit must be > 0".into()));
        }
        Ok(())
    }
}

/// `τ = kp (q̂ − q) − kd q̇`, clamped to the torque limit.
pub fn pd_torques(q_des: &JointVector, q: &JointVector, q_dot: &JointVector, gains: &PdGains) -> JointVector {
    std::array::from_fn(|j| {
        let tau = gains.kp[j] * (q_des[j] - q[j]) - gains.kd[j] * q_dot[j];
        tau.clamp(-gains.torque_limit, gains.torque_limit)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub legs: LegGeometry,
    pub torso_mass: f64,
    /// Torso box length, width, height.
    pub torso_size: [f64; 3],
    /// Reflected rotor inertia per joint, kg·m².
    pub joint_inertia: f64,
    pub contact: ContactParams,
    pub limits: JointLimits,
    pub gravity: f64,
    /// Nominal standing base height, m.
    pub nominal_height: f64,
    /// A foot counts as touching when its height is at or below this.
    pub foot_contact_height: f64,
    /// The body touches the ground when any torso corner is lower than this.
    pub body_contact_height: f64,
    /// Joint speed beyond which the simulation is considered blown up.
    pub max_joint_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            legs: LegGeometry::default(),
            torso_mass: 12.0,
            torso_size: [0.5, 0.3, 0.15],
            joint_inertia: 0.02,
            contact: ContactParams::default(),
            limits: JointLimits::default(),
            gravity: 9.81,
            nominal_height: 0.30,
            foot_contact_height: 0.0,
            body_contact_height: 0.03,
            max_joint_speed: 100.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sim.torso_mass", self.torso_mass),
            ("sim.joint_inertia", self.joint_inertia),
            ("sim.nominal_height", self.nominal_height),
            ("sim.contact.stiffness", self.contact.stiffness),
            ("sim.max_joint_speed", self.max_joint_speed),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if self.torso_size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("sim.torso_size entries must be positive".into()));
        }
        Ok(())
    }

    /// Principal inertia of the uniform torso box.
    pub fn torso_inertia(&self) -> Vec3 {
        let [l, w, h] = self.torso_size;
        let k = self.torso_mass / 12.0;
        Vec3::new(k * (w * w + h * h), k * (l * l + h * h), k * (l * l + w * w))
    }

    pub fn torso_corners(&self) -> [Vec3; 8] {
        let [l, w, h] = self.torso_size;
        std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { 0.5 } else { -0.5 };
            let sy = if i & 2 == 0 { 0.5 } else { -0.5 };
            let sz = if i & 4 == 0 { 0.5 } else { -0.5 };
            Vec3::new(sx * l, sy * w, sz * h)
        })
    }

    /// Foot sink when the robot stands still on four feet.
    pub fn static_foot_depth(&self) -> f64 {
        self.torso_mass * self.gravity / (NUM_LEGS as f64 * self.contact.stiffness)
    }

    /// Standing joint angles whose feet sit at the static sink depth.
    pub fn nominal_joints(&self) -> JointVector {
        let leg = self.legs.stance_joints(self.nominal_height + self.static_foot_depth());
        std::array::from_fn(|j| leg[j % 3])
    }

    /// Desired joint positions that hold the nominal stance against the
    /// static foot load under the given PD gains.
    pub fn nominal_hold_action(&self, gains: &PdGains) -> JointVector {
        let q = self.nominal_joints();
        let load = Vec3::new(0.0, 0.0, self.torso_mass * self.gravity / NUM_LEGS as f64);
        let mut action = q;
        for leg in 0..NUM_LEGS {
            let jac = self.legs.jacobian(leg, leg_joints(&q, leg));
            for (k, col) in jac.iter().enumerate() {
                let j = 3 * leg + k;
                // kp (q̂ − q) + Jᵀ F = 0
                action[j] = q[j] - col.dot(load) / gains.kp[j];
            }
        }
        action
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Seconds since reset.
    pub time: f64,
    pub base_position: Vec3,
    pub base_orientation: Quaternion,
    /// World frame.
    pub base_lin_vel: Vec3,
    /// World frame; z is the yaw rate.
    pub base_ang_vel: Vec3,
    pub joint_pos: JointVector,
    pub joint_vel: JointVector,
    pub last_torques: JointVector,
    pub foot_contact: [bool; NUM_LEGS],
    pub body_contact: bool,
    pub foot_pos_world: [Vec3; NUM_LEGS],
    pub foot_heights: [f64; NUM_LEGS],
    pub foot_vel_world: [Vec3; NUM_LEGS],
    pub phase: f64,
}

impl RobotState {
    pub fn gravity_in_base(&self) -> Vec3 {
        gravity_in_base(self.base_orientation).unwrap_or_else(|_| {
            self.base_orientation
                .normalized()
                .rotate_inverse(Vec3::new(0.0, 0.0, -1.0))
        })
    }

    pub fn yaw(&self) -> f64 {
        self.base_orientation.yaw()
    }

    pub fn height(&self) -> f64 {
        self.base_position.z
    }

    pub fn ang_vel_base(&self) -> Vec3 {
        self.base_orientation.rotate_inverse(self.base_ang_vel)
    }

    pub fn lin_vel_heading(&self) -> Vec3 {
        crate::geometry::world_to_heading(self.base_lin_vel, self.yaw())
    }

    /// Foot positions in the base frame.
    pub fn foot_pos_base(&self) -> [Vec3; NUM_LEGS] {
        std::array::from_fn(|i| {
            self.base_orientation
                .rotate_inverse(self.foot_pos_world[i] - self.base_position)
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        let checks: [(&'static str, bool); 6] = [
            ("base_position", self.base_position.is_finite()),
            ("base_orientation", self.base_orientation.is_finite()),
            ("base_lin_vel", self.base_lin_vel.is_finite()),
            ("base_ang_vel", self.base_ang_vel.is_finite()),
            ("joint_pos", self.joint_pos.iter().all(|v| v.is_finite())),
            ("joint_vel", self.joint_vel.iter().all(|v| v.is_finite())),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(Error::NonFinite { field }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    Nominal,
    /// Lying on either side, lightly randomized.
    Fallen,
    /// Uniform tilt between 50° and 130° about a random horizontal axis.
    RandomFall,
}

/// Owns the configuration and counts physics substeps.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: SimConfig,
    pub gains: PdGains,
    substeps: u64,
}

impl Simulator {
    pub fn new(config: SimConfig, gains: PdGains) -> Self {
        Simulator {
            config,
            gains,
            substeps: 0,
        }
    }

    pub fn substep_count(&self) -> u64 {
        self.substeps
    }

    pub fn step_physics(&mut self, state: &RobotState, torques: &JointVector, dt: f64) -> Result<RobotState> {
        let mut next = state.clone();
        self.step_in_place(&mut next, torques, dt)?;
        Ok(next)
    }

    fn step_in_place(&mut self, s: &mut RobotState, torques: &JointVector, dt: f64) -> Result<()> {
        if dt == 0.0 {
            return Ok(());
        }
        self.substeps += 1;
        let cfg = &self.config;
        let mass = cfg.torso_mass;
        let inertia = cfg.torso_inertia();
        let rot = s.base_orientation;
        let omega = s.base_ang_vel;

        let mut force = Vec3::new(0.0, 0.0, -mass * cfg.gravity);
        let mut torque = Vec3::ZERO;
        let mut joint_load = [0.0; NUM_JOINTS];

        for leg in 0..NUM_LEGS {
            let q = leg_joints(&s.joint_pos, leg);
            let jac = cfg.legs.jacobian(leg, q);
            let r_world = rot.rotate(cfg.legs.forward_kinematics(leg, q));
            let qd = leg_joints(&s.joint_vel, leg);
            let rel = jac[0] * qd[0] + jac[1] * qd[1] + jac[2] * qd[2];
            let vel = s.base_lin_vel + omega.cross(r_world) + rot.rotate(rel);
            let pos = s.base_position + r_world;
            let inv_mass = |d: Vec3| {
                let db = rot.rotate_inverse(d);
                let leg_term: f64 = jac.iter().map(|c| c.dot(db).powi(2)).sum::<f64>() / cfg.joint_inertia;
                leg_term + self.point_inverse_mass(r_world, d, inertia)
            };
            if let Some(f) = self.contact_force(pos, vel, dt, inv_mass) {
                force += f;
                torque += r_world.cross(f);
                let fb = rot.rotate_inverse(f);
                for (k, col) in jac.iter().enumerate() {
                    joint_load[3 * leg + k] = col.dot(fb);
                }
            }
        }

        for corner in cfg.torso_corners() {
            let r_world = rot.rotate(corner);
            let pos = s.base_position + r_world;
            if pos.z >= 0.0 {
                continue;
            }
            let vel = s.base_lin_vel + omega.cross(r_world);
            let inv_mass = |d: Vec3| self.point_inverse_mass(r_world, d, inertia);
            if let Some(f) = self.contact_force(pos, vel, dt, inv_mass) {
                force += f;
                torque += r_world.cross(f);
            }
        }

        // torso
        let acc = force.scale(1.0 / mass);
        let omega_b = rot.rotate_inverse(omega);
        let torque_b = rot.rotate_inverse(torque);
        let i_omega = Vec3::new(inertia.x * omega_b.x, inertia.y * omega_b.y, inertia.z * omega_b.z);
        let rhs = torque_b - omega_b.cross(i_omega);
        let alpha_b = Vec3::new(rhs.x / inertia.x, rhs.y / inertia.y, rhs.z / inertia.z);
        s.base_lin_vel += acc * dt;
        s.base_ang_vel += rot.rotate(alpha_b) * dt;
        s.base_position += s.base_lin_vel * dt;
        s.base_orientation = rot.integrate(s.base_ang_vel, dt);

        // joints
        for j in 0..NUM_JOINTS {
            let qdd = (torques[j] + joint_load[j]) / cfg.joint_inertia;
            s.joint_vel[j] += qdd * dt;
            s.joint_pos[j] += s.joint_vel[j] * dt;
            let [lo, hi] = cfg.limits.bounds(j);
            if s.joint_pos[j] < lo {
                s.joint_pos[j] = lo;
                s.joint_vel[j] = s.joint_vel[j].max(0.0);
            } else if s.joint_pos[j] > hi {
                s.joint_pos[j] = hi;
                s.joint_vel[j] = s.joint_vel[j].min(0.0);
            }
        }
        s.last_torques = *torques;
        s.time += dt;
        s.check_finite()?;
        self.refresh(s);
        Ok(())
    }

    /// Inverse effective mass of the torso at a point offset `r` along `d`.
    fn point_inverse_mass(&self, r_world: Vec3, d: Vec3, inertia_b: Vec3) -> f64 {
        let n = d.norm();
        if n == 0.0 {
            return 1.0 / self.config.torso_mass;
        }
        let d = d.scale(1.0 / n);
        // TODO: use the world-frame inertia; the body-frame diagonal is exact only when upright.
        let rxd = r_world.cross(d);
        1.0 / self.config.torso_mass
            + rxd.x * rxd.x / inertia_b.x
            + rxd.y * rxd.y / inertia_b.y
            + rxd.z * rxd.z / inertia_b.z
    }

    /// Spring-damper normal force with Coulomb-capped viscous friction.
    ///
    /// The viscous coefficient is additionally capped so that a single step
    /// can at most halve the slip speed of the contact point; without the cap
    /// the light joints make explicit friction unstable.
    fn contact_force(&self, pos: Vec3, vel: Vec3, dt: f64, inv_mass: impl Fn(Vec3) -> f64) -> Option<Vec3> {
        let depth = -pos.z;
        if depth <= 0.0 {
            return None;
        }
        let c = &self.config.contact;
        let normal = (c.stiffness * depth - c.damping * vel.z).max(0.0);
        let slip = vel.horizontal();
        let speed = slip.norm();
        let mut f = Vec3::new(0.0, 0.0, normal);
        if speed > 0.0 && normal > 0.0 {
            let cap = 0.5 / (inv_mass(slip) * dt);
            let mag = (c.friction * normal).min(c.tangential.min(cap) * speed);
            f -= slip.scale(mag / speed);
        }
        Some(f)
    }

    /// Recomputes foot kinematics and contact flags from the configuration.
    pub fn refresh(&self, s: &mut RobotState) {
        let cfg = &self.config;
        let rot = s.base_orientation;
        for leg in 0..NUM_LEGS {
            let q = leg_joints(&s.joint_pos, leg);
            let qd = leg_joints(&s.joint_vel, leg);
            let jac = cfg.legs.jacobian(leg, q);
            let r = rot.rotate(cfg.legs.forward_kinematics(leg, q));
            let rel = jac[0] * qd[0] + jac[1] * qd[1] + jac[2] * qd[2];
            s.foot_pos_world[leg] = s.base_position + r;
            s.foot_heights[leg] = s.foot_pos_world[leg].z;
            s.foot_vel_world[leg] = s.base_lin_vel + s.base_ang_vel.cross(r) + rot.rotate(rel);
            s.foot_contact[leg] = s.foot_heights[leg] <= cfg.foot_contact_height;
        }
        s.body_contact = cfg
            .torso_corners()
            .iter()
            .any(|c| s.base_position.z + rot.rotate(*c).z < cfg.body_contact_height);
    }

    /// Holds `action` for one 25 Hz period of 40 PD-controlled substeps.
    pub fn control_step(
        &mut self,
        state: &RobotState,
        action: &JointVector,
        phase_frequency: f64,
    ) -> Result<RobotState> {
        let mut s = state.clone();
        for _ in 0..SUBSTEPS_PER_CONTROL {
            let tau = pd_torques(action, &s.joint_pos, &s.joint_vel, &self.gains);
            self.step_in_place(&mut s, &tau, PHYSICS_DT)?;
        }
        // keep the clock exact regardless of float accumulation
        s.time = state.time + CONTROL_DT;
        s.phase = advance_phase(state.phase, phase_frequency, CONTROL_DT);
        Ok(s)
    }

    pub fn is_blown_up(&self, s: &RobotState) -> bool {
        s.check_finite().is_err() || s.joint_vel.iter().any(|v| v.abs() > self.config.max_joint_speed)
    }

    /// Instantaneous torso impulse in N·s, world frame.
    pub fn apply_impulse(&self, s: &mut RobotState, impulse: Vec3) {
        s.base_lin_vel += impulse.scale(1.0 / self.config.torso_mass);
        self.refresh(s);
    }

    pub fn reset(&self, mode: ResetMode, rng: &mut impl Rng) -> RobotState {
        let cfg = &self.config;
        let mut s = RobotState {
            time: 0.0,
            base_position: Vec3::new(0.0, 0.0, cfg.nominal_height),
            base_orientation: Quaternion::IDENTITY,
            base_lin_vel: Vec3::ZERO,
            base_ang_vel: Vec3::ZERO,
            joint_pos: cfg.nominal_joints(),
            joint_vel: [0.0; NUM_JOINTS],
            last_torques: [0.0; NUM_JOINTS],
            foot_contact: [false; NUM_LEGS],
            body_contact: false,
            foot_pos_world: [Vec3::ZERO; NUM_LEGS],
            foot_heights: [0.0; NUM_LEGS],
            foot_vel_world: [Vec3::ZERO; NUM_LEGS],
            phase: 0.0,
        };
        let orientation = match mode {
            ResetMode::Nominal => None,
            ResetMode::Fallen => {
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let roll = side * (std::f64::consts::FRAC_PI_2 + rng.random_range(-0.3..0.3));
                let pitch = rng.random_range(-0.3..0.3);
                let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                Some(Quaternion::from_euler(roll, pitch, yaw))
            }
            ResetMode::RandomFall => {
                let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let tilt = rng.random_range(50f64.to_radians()..130f64.to_radians());
                let axis = Vec3::new(heading.cos(), heading.sin(), 0.0);
                let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                Some(Quaternion::from_axis_angle(axis, tilt) * Quaternion::from_axis_angle(Vec3::Z, yaw))
            }
        };
        if let Some(q) = orientation {
            s.base_orientation = q.normalized();
            s.joint_pos = std::array::from_fn(|j| {
                let [lo, hi] = cfg.limits.bounds(j);
                rng.random_range(lo..hi)
            });
            // drop it so the lowest point just touches the ground
            let mut lowest = f64::INFINITY;
            for c in cfg.torso_corners() {
                lowest = lowest.min(s.base_orientation.rotate(c).z);
            }
            for leg in 0..NUM_LEGS {
                let p = cfg.legs.forward_kinematics(leg, leg_joints(&s.joint_pos, leg));
                lowest = lowest.min(s.base_orientation.rotate(p).z);
            }
            s.base_position = Vec3::new(0.0, 0.0, -lowest + 0.002);
        }
        self.refresh(&mut s);
        s
    }
}

impl Default for Simulator {
    fn default() -> Self {
        Simulator::new(SimConfig::default(), PdGains::default())
    }
}
