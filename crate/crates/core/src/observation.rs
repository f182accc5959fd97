//! Observation vectors fed to experts, the gating network and critics.

use crate::gait::{phase_encoding, wrap_phase, GaitSchedules, GaitType};
use crate::geometry::{world_to_heading, Vec3, NUM_JOINTS};
use crate::reward::{Goal, MAX_GOAL_DISTANCE};
use crate::sim::RobotState;

/// gravity (3) + angular velocity (3) + heading-frame linear velocity (3) + joints (12).
pub const PROPRIO_DIM: usize = 9 + NUM_JOINTS;
/// Proprioception plus the phase encoding.
pub const LOCOMOTION_DIM: usize = PROPRIO_DIM + 2;
/// Proprioception plus the normalized goal offset.
pub const GATING_DIM: usize = PROPRIO_DIM + 2;
/// Gating input followed by the phase encodings of trot, pace, bound, gallop.
pub const MULTI_DIM: usize = GATING_DIM + 8;

/// Proprioceptive block; `lin_vel_heading` overrides the true velocity (e.g.
/// with an estimate).
pub fn proprio(state: &RobotState, lin_vel_heading: Option<Vec3>) -> [f64; PROPRIO_DIM] {
    let g = state.gravity_in_base();
    let w = state.ang_vel_base();
    let v = lin_vel_heading.unwrap_or_else(|| state.lin_vel_heading());
    let mut out = [0.0; PROPRIO_DIM];
    out[..3].copy_from_slice(&g.to_array());
    out[3..6].copy_from_slice(&w.to_array());
    out[6..9].copy_from_slice(&v.to_array());
    out[9..].copy_from_slice(&state.joint_pos);
    out
}

/// Input of a single-skill expert: the phase pair is appended for periodic gaits.
pub fn expert_observation(state: &RobotState, gait: GaitType, lin_vel_heading: Option<Vec3>) -> Vec<f64> {
    let mut obs = proprio(state, lin_vel_heading).to_vec();
    if gait.is_periodic() {
        obs.extend_from_slice(&phase_encoding(state.phase));
    }
    obs
}

/// Robot-to-goal offset in the heading frame, scaled by 15 m and clamped to [-1, 1].
pub fn goal_offset(state: &RobotState, goal: &Goal) -> [f64; 2] {
    let rel = (goal.position() - state.base_position).horizontal();
    let h = world_to_heading(rel, state.yaw());
    [
        (h.x / MAX_GOAL_DISTANCE).clamp(-1.0, 1.0),
        (h.y / MAX_GOAL_DISTANCE).clamp(-1.0, 1.0),
    ]
}

/// Full observation used by the composite policy and its critics.
pub fn multi_observation(
    state: &RobotState,
    goal: &Goal,
    schedules: &GaitSchedules,
    lin_vel_heading: Option<Vec3>,
) -> [f64; MULTI_DIM] {
    let mut out = [0.0; MULTI_DIM];
    out[..PROPRIO_DIM].copy_from_slice(&proprio(state, lin_vel_heading));
    out[PROPRIO_DIM..GATING_DIM].copy_from_slice(&goal_offset(state, goal));
    for (k, gait) in [GaitType::Trot, GaitType::Pace, GaitType::Bound, GaitType::Gallop]
        .into_iter()
        .enumerate()
    {
        let phase = wrap_phase(state.time * schedules.frequency(gait));
        out[GATING_DIM + 2 * k..GATING_DIM + 2 * k + 2].copy_from_slice(&phase_encoding(phase));
    }
    out
}

/// The slice of a multi observation that `gait`'s expert consumes.
pub fn expert_slice(multi: &[f64], gait: GaitType) -> Vec<f64> {
    let mut obs = multi[..PROPRIO_DIM].to_vec();
    let k = match gait {
        GaitType::Recovery => return obs,
        GaitType::Trot => 0,
        GaitType::Pace => 1,
        GaitType::Bound => 2,
        GaitType::Gallop => 3,
    };
    obs.extend_from_slice(&multi[GATING_DIM + 2 * k..GATING_DIM + 2 * k + 2]);
    obs
}

pub fn gating_slice(multi: &[f64]) -> &[f64] {
    &multi[..GATING_DIM]
}
