//! Small fixed-size math types, reference frames and leg kinematics.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;

/// Joint-space quantity ordered (FR, FL, RR, RL) x (hip-roll, hip-pitch, knee).
pub type JointVector = [f64; NUM_JOINTS];

/// Tolerance for accepting a quaternion as unit length.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Horizontal (x, y) part with z zeroed.
    pub fn horizontal(self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// Unit quaternion mapping base-frame vectors into the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quaternion::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis.scale(s / n);
        Quaternion::new(c, a.x, a.y, a.z)
    }

    /// Z-Y-X (yaw, pitch, roll) Euler angles.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let qz = Quaternion::from_axis_angle(Vec3::Z, yaw);
        let qy = Quaternion::from_axis_angle(Vec3::Y, pitch);
        let qx = Quaternion::from_axis_angle(Vec3::X, roll);
        qz * qy * qx
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Quaternion {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Base frame -> world frame.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    /// World frame -> base frame.
    pub fn rotate_inverse(self, v: Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    /// Heading angle of the base x-axis projected on the ground plane.
    pub fn yaw(self) -> f64 {
        let siny = 2.0 * (self.w * self.z + self.x * self.y);
        let cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    /// Roll and pitch of the Z-Y-X decomposition.
    pub fn roll_pitch(self) -> (f64, f64) {
        let sinr = 2.0 * (self.w * self.x + self.y * self.z);
        let cosr = 1.0 - 2.0 * (self.x * self.x + self.y * self.y);
        let sinp = (2.0 * (self.w * self.y - self.z * self.x)).clamp(-1.0, 1.0);
        (sinr.atan2(cosr), sinp.asin())
    }

    /// Rotates by a world-frame angular velocity over `dt`.
    pub fn integrate(self, omega_world: Vec3, dt: f64) -> Quaternion {
        let angle = omega_world.norm() * dt;
        if angle == 0.0 {
            return self;
        }
        (Quaternion::from_axis_angle(omega_world, angle) * self).normalized()
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// World down-vector expressed in the base frame.
pub fn gravity_in_base(orientation: Quaternion) -> Result<Vec3> {
    let norm = orientation.norm();
    if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(Error::NotNormalized { norm });
    }
    Ok(orientation.rotate_inverse(Vec3::new(0.0, 0.0, -1.0)))
}

/// Rotates a world-frame vector by `-yaw` about the world z-axis.
pub fn world_to_heading(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

/// Inverse of [`world_to_heading`].
pub fn heading_to_world(v: Vec3, yaw: f64) -> Vec3 {
    world_to_heading(v, -yaw)
}

/// Serial-chain geometry of the four legs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegGeometry {
    /// Hip-roll axis origin per leg in the base frame, order FR, FL, RR, RL.
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    /// Lateral offset from the roll axis to the thigh.
    pub hip_offset: f64,
    pub thigh: f64,
    pub calf: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        LegGeometry {
            hip_offsets: [
                [0.183, -0.047, 0.0],
                [0.183, 0.047, 0.0],
                [-0.183, -0.047, 0.0],
                [-0.183, 0.047, 0.0],
            ],
            hip_offset: 0.0838,
            thigh: 0.2,
            calf: 0.2,
        }
    }
}

impl LegGeometry {
    /// -1 for right legs, +1 for left legs.
    pub fn side_sign(leg: usize) -> f64 {
        if leg.is_multiple_of(2) {
            -1.0
        } else {
            1.0
        }
    }

    pub fn chain_length(&self) -> f64 {
        self.hip_offset + self.thigh + self.calf
    }

    pub fn hip(&self, leg: usize) -> Vec3 {
        Vec3::from_array(self.hip_offsets[leg])
    }

    /// Foot position in the base frame.
    pub fn forward_kinematics(&self, leg: usize, joints: [f64; 3]) -> Vec3 {
        let [roll, pitch, knee] = joints;
        let lx = -self.thigh * pitch.sin() - self.calf * (pitch + knee).sin();
        let lz = -self.thigh * pitch.cos() - self.calf * (pitch + knee).cos();
        let ly = Self::side_sign(leg) * self.hip_offset;
        let (sr, cr) = roll.sin_cos();
        self.hip(leg) + Vec3::new(lx, ly * cr - lz * sr, ly * sr + lz * cr)
    }

    /// Columns d(foot)/d(roll), d(foot)/d(pitch), d(foot)/d(knee), base frame.
    pub fn jacobian(&self, leg: usize, joints: [f64; 3]) -> [Vec3; 3] {
        let [roll, pitch, knee] = joints;
        let (sp, cp) = pitch.sin_cos();
        let (spk, cpk) = (pitch + knee).sin_cos();
        let (sr, cr) = roll.sin_cos();
        let lz = -self.thigh * cp - self.calf * cpk;
        let ly = Self::side_sign(leg) * self.hip_offset;

        let d_roll = Vec3::new(0.0, -ly * sr - lz * cr, ly * cr - lz * sr);
        let (dx_p, dz_p) = (-self.thigh * cp - self.calf * cpk, self.thigh * sp + self.calf * spk);
        let d_pitch = Vec3::new(dx_p, -dz_p * sr, dz_p * cr);
        let (dx_k, dz_k) = (-self.calf * cpk, self.calf * spk);
        let d_knee = Vec3::new(dx_k, -dz_k * sr, dz_k * cr);
        [d_roll, d_pitch, d_knee]
    }

    /// Zero-roll joint triplet placing the foot `depth` below the hip, directly under it.
    pub fn stance_joints(&self, depth: f64) -> [f64; 3] {
        let (l1, l2) = (self.thigh, self.calf);
        let cos_k = ((depth * depth - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let knee = -cos_k.acos();
        let pitch = (-l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        [0.0, pitch, knee]
    }
}

pub fn leg_joints(q: &JointVector, leg: usize) -> [f64; 3] {
    [q[3 * leg], q[3 * leg + 1], q[3 * leg + 2]]
}

/// Foot position of `leg` in the base frame using default geometry.
pub fn leg_forward_kinematics(leg: usize, joints: [f64; 3]) -> Vec3 {
    LegGeometry::default().forward_kinematics(leg, joints)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;

    use super::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn gravity_identity_and_roll() {
        let g = gravity_in_base(Quaternion::IDENTITY).unwrap();
        assert!(close(g, Vec3::new(0.0, 0.0, -1.0), 1e-12));
        let g = gravity_in_base(Quaternion::from_axis_angle(Vec3::X, PI)).unwrap();
        assert!(close(g, Vec3::new(0.0, 0.0, 1.0), 1e-12));
    }

    #[test]
    fn gravity_under_pitch() {
        // Nose-up quarter turn: the base x-axis points up, so "down" is -x.
        let up = Quaternion::from_axis_angle(Vec3::Y, -FRAC_PI_2);
        assert!(close(gravity_in_base(up).unwrap(), Vec3::new(-1.0, 0.0, 0.0), 1e-9));
        let down = Quaternion::from_axis_angle(Vec3::Y, FRAC_PI_2);
        assert!(close(gravity_in_base(down).unwrap(), Vec3::new(1.0, 0.0, 0.0), 1e-9));
    }

    #[test]
    fn gravity_rejects_unnormalized() {
        let q = Quaternion::new(2.0, 0.0, 0.0, 0.0);
        assert!(matches!(gravity_in_base(q), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn heading_rotation_examples() {
        assert!(close(world_to_heading(Vec3::X, 0.0), Vec3::X, 1e-15));
        assert!(close(
            world_to_heading(Vec3::X, FRAC_PI_2),
            Vec3::new(0.0, -1.0, 0.0),
            1e-12
        ));
        for yaw in [-3.0, 0.3, 2.0] {
            assert_eq!(
                world_to_heading(Vec3::new(0.0, 0.0, 2.0), yaw),
                Vec3::new(0.0, 0.0, 2.0)
            );
        }
    }

    #[test]
    fn euler_roundtrip() {
        let q = Quaternion::from_euler(0.2, -0.3, 1.1);
        let (r, p) = q.roll_pitch();
        assert!((r - 0.2).abs() < 1e-12 && (p + 0.3).abs() < 1e-12);
        assert!((q.yaw() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn fk_extended_chain() {
        let geo = LegGeometry::default();
        for leg in 0..NUM_LEGS {
            let p = geo.forward_kinematics(leg, [0.0; 3]);
            let hip = geo.hip(leg);
            let expect = Vec3::new(
                hip.x,
                hip.y + LegGeometry::side_sign(leg) * geo.hip_offset,
                -(geo.thigh + geo.calf),
            );
            assert!(close(p, expect, 1e-15), "leg {leg}: {p:?}");
        }
    }

    #[test]
    fn fk_right_angle_knee() {
        let geo = LegGeometry::default();
        let p = geo.forward_kinematics(0, [0.0, 0.0, -FRAC_PI_2]) - geo.hip(0);
        assert!((p.z + geo.thigh).abs() < 1e-12);
        assert!((p.x - geo.calf).abs() < 1e-12);
    }

    #[test]
    fn fk_mirror_symmetry() {
        let geo = LegGeometry::default();
        let (r, p, k) = (0.3, 0.7, -1.4);
        for (right, left) in [(0, 1), (2, 3)] {
            let a = geo.forward_kinematics(right, [r, p, k]);
            let b = geo.forward_kinematics(left, [-r, p, k]);
            assert!(close(a, Vec3::new(b.x, -b.y, b.z), 1e-12));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let geo = LegGeometry::default();
        let q = [0.2, 0.8, -1.5];
        for leg in 0..NUM_LEGS {
            let jac = geo.jacobian(leg, q);
            for j in 0..3 {
                let mut hi = q;
                let mut lo = q;
                hi[j] += 1e-6;
                lo[j] -= 1e-6;
                let fd = (geo.forward_kinematics(leg, hi) - geo.forward_kinematics(leg, lo)) * (0.5e6);
                assert!(close(fd, jac[j], 1e-8), "leg {leg} joint {j}");
            }
        }
    }

    #[test]
    fn stance_joints_place_foot_below_hip() {
        let geo = LegGeometry::default();
        let q = geo.stance_joints(0.3);
        let p = geo.forward_kinematics(0, q) - geo.hip(0);
        assert!(p.x.abs() < 1e-12 && (p.z + 0.3).abs() < 1e-12);
    }

    fn unit_quaternion() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z).normalized())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn gravity_is_unit(q in unit_quaternion()) {
            let g = gravity_in_base(q).unwrap();
            prop_assert!((g.norm() - 1.0).abs() < 1e-9);
            prop_assert!((q.normalized().norm() - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn heading_is_invertible(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64, yaw in -7.0..7.0f64) {
            let v = Vec3::new(x, y, z);
            let h = world_to_heading(v, yaw);
            prop_assert!((h.norm() - v.norm()).abs() < 1e-12);
            prop_assert!((world_to_heading(h, -yaw) - v).norm() < 1e-12);
        }

        #[test]
        fn fk_is_continuous(leg in 0usize..4, r in -0.8..0.8f64, p in -1.0..3.9f64, k in -2.7..-0.9f64,
                            dr in -1.0..1.0f64, dp in -1.0..1.0f64, dk in -1.0..1.0f64) {
            let geo = LegGeometry::default();
            let a = geo.forward_kinematics(leg, [r, p, k]);
            let b = geo.forward_kinematics(leg, [r + dr * 1e-6, p + dp * 1e-6, k + dk * 1e-6]);
            prop_assert!((a - b).norm() <= geo.chain_length() * 1e-5);
        }
    }
}
