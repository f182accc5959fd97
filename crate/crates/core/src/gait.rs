//! Reference foot-contact schedules and gait phase bookkeeping.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NUM_LEGS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitType {
    Recovery,
    Trot,
    Pace,
    Bound,
    Gallop,
}

impl GaitType {
    /// Expert order used by bundles, gating outputs and telemetry.
    pub const ALL: [GaitType; 5] = [
        GaitType::Recovery,
        GaitType::Trot,
        GaitType::Pace,
        GaitType::Bound,
        GaitType::Gallop,
    ];

    pub fn index(self) -> usize {
        match self {
            GaitType::Recovery => 0,
            GaitType::Trot => 1,
            GaitType::Pace => 2,
            GaitType::Bound => 3,
            GaitType::Gallop => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitType::Recovery => "recovery",
            GaitType::Trot => "trot",
            GaitType::Pace => "pace",
            GaitType::Bound => "bound",
            GaitType::Gallop => "gallop",
        }
    }

    pub fn is_periodic(self) -> bool {
        self != GaitType::Recovery
    }
}

impl fmt::Display for GaitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GaitType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GaitType::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown gait `{s}`")))
    }
}

/// Stance intervals `[start, end)` over normalized phase, one list per foot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPattern {
    pub stance: [Vec<[f64; 2]>; NUM_LEGS],
}

impl ContactPattern {
    pub fn new(stance: [Vec<[f64; 2]>; NUM_LEGS]) -> Result<Self> {
        let p = ContactPattern { stance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (foot, intervals) in self.stance.iter().enumerate() {
            let mut sorted = intervals.clone();
            sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
            for iv in &sorted {
                if !(0.0 <= iv[0] && iv[0] < iv[1] && iv[1] <= 1.0) {
                    return Err(Error::Config(format!(
                        "foot {foot}: stance interval {iv:?} not inside [0, 1)"
                    )));
                }
            }
            for pair in sorted.windows(2) {
                if pair[1][0] < pair[0][1] {
                    return Err(Error::Config(format!("foot {foot}: overlapping stance intervals")));
                }
            }
        }
        Ok(())
    }

    pub fn contacts(&self, phase: f64) -> [bool; NUM_LEGS] {
        let phi = wrap_phase(phase);
        std::array::from_fn(|foot| self.stance[foot].iter().any(|iv| iv[0] <= phi && phi < iv[1]))
    }

    pub fn duty_factor(&self, foot: usize) -> f64 {
        self.stance[foot].iter().map(|iv| iv[1] - iv[0]).sum()
    }
}

/// Built-in schedules and clock frequencies for the four periodic gaits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSchedules {
    pub trot: ContactPattern,
    pub pace: ContactPattern,
    pub bound: ContactPattern,
    pub gallop: ContactPattern,
    /// Phase clock frequencies in Hz, indexed like [`GaitType::ALL`].
    pub frequency: [f64; 5],
}

impl Default for GaitSchedules {
    fn default() -> Self {
        let half = |a: f64, b: f64| vec![[a, b]];
        GaitSchedules {
            // FR, FL, RR, RL
            trot: ContactPattern {
                stance: [half(0.0, 0.5), half(0.5, 1.0), half(0.5, 1.0), half(0.0, 0.5)],
            },
            pace: ContactPattern {
                stance: [half(0.0, 0.5), half(0.5, 1.0), half(0.0, 0.5), half(0.5, 1.0)],
            },
            bound: ContactPattern {
                stance: [half(0.0, 0.4), half(0.0, 0.4), half(0.5, 0.9), half(0.5, 0.9)],
            },
            gallop: ContactPattern {
                stance: [half(0.0, 0.25), half(0.15, 0.4), half(0.5, 0.75), half(0.65, 0.9)],
            },
            frequency: [0.0, 2.0, 2.0, 2.5, 3.0],
        }
    }
}

impl GaitSchedules {
    pub fn pattern(&self, gait: GaitType) -> Result<&ContactPattern> {
        match gait {
            GaitType::Recovery => Err(Error::NoContactPattern(gait)),
            GaitType::Trot => Ok(&self.trot),
            GaitType::Pace => Ok(&self.pace),
            GaitType::Bound => Ok(&self.bound),
            GaitType::Gallop => Ok(&self.gallop),
        }
    }

    pub fn frequency(&self, gait: GaitType) -> f64 {
        self.frequency[gait.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.trot, &self.pace, &self.bound, &self.gallop] {
            p.validate()?;
        }
        if self.frequency.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config("gait.frequency entries must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn reference_contacts(&self, gait: GaitType, phase: f64) -> Result<[bool; NUM_LEGS]> {
        Ok(self.pattern(gait)?.contacts(phase))
    }
}

/// Desired stance flags (FR, FL, RR, RL) from the built-in schedules.
pub fn reference_contacts(gait: GaitType, phase: f64) -> Result<[bool; NUM_LEGS]> {
    GaitSchedules::default().reference_contacts(gait, phase)
}

pub fn wrap_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if p >= 1.0 {
        0.0
    } else {
        p
    }
}

pub fn advance_phase(phase: f64, frequency: f64, dt: f64) -> f64 {
    wrap_phase(phase + frequency * dt)
}

/// Observation encoding `(sin 2πφ, cos 2πφ)`.
pub fn phase_encoding(phase: f64) -> [f64; 2] {
    let (s, c) = (TAU * phase).sin_cos();
    [s, c]
}

#[cfg(test)]
mod tests {
    use super::*;

    const FR: usize = 0;
    const FL: usize = 1;
    const RR: usize = 2;
    const RL: usize = 3;

    #[test]
    fn trot_quarter_phase() {
        assert_eq!(
            reference_contacts(GaitType::Trot, 0.25).unwrap(),
            [true, false, false, true]
        );
    }

    #[test]
    fn bound_flight_phase() {
        assert_eq!(reference_contacts(GaitType::Bound, 0.45).unwrap(), [false; 4]);
    }

    #[test]
    fn gallop_point_two() {
        let c = reference_contacts(GaitType::Gallop, 0.2).unwrap();
        let n = c.iter().filter(|b| **b).count();
        assert!(n == 1 || n == 2);
        // never a diagonal or lateral pair
        assert!(!(c[FR] && c[RL]) && !(c[FL] && c[RR]));
        assert!(!(c[FR] && c[RR]) && !(c[FL] && c[RL]));
    }

    #[test]
    fn recovery_has_no_pattern() {
        assert!(matches!(
            reference_contacts(GaitType::Recovery, 0.1),
            Err(Error::NoContactPattern(GaitType::Recovery))
        ));
    }

    #[test]
    fn phase_advance_examples() {
        assert!(advance_phase(0.9, 2.5, 0.04).abs() < 1e-12);
        assert_eq!(advance_phase(0.37, 2.5, 0.0), 0.37);
        let [s, c] = phase_encoding(0.0);
        assert_eq!((s, c), (0.0, 1.0));
        assert_eq!(wrap_phase(-1e-18), 0.0);
    }

    #[test]
    fn pattern_structure_on_grid() {
        let sched = GaitSchedules::default();
        // dyadic grid so that shifting by whole periods is exact
        for i in 0..1024 {
            let phi = i as f64 / 1024.0;
            for gait in [GaitType::Trot, GaitType::Pace, GaitType::Bound, GaitType::Gallop] {
                let c = sched.reference_contacts(gait, phi).unwrap();
                assert_eq!(c, sched.reference_contacts(gait, phi + 1.0).unwrap(), "{gait} {phi}");
                assert_eq!(c, sched.reference_contacts(gait, phi - 3.0).unwrap(), "{gait} {phi}");
                let n = c.iter().filter(|b| **b).count();
                match gait {
                    GaitType::Trot => {
                        assert_eq!(n, 2);
                        assert!((c[FR] && c[RL]) || (c[FL] && c[RR]));
                    }
                    GaitType::Pace => {
                        assert_eq!(n, 2);
                        assert!((c[FR] && c[RR]) || (c[FL] && c[RL]));
                    }
                    GaitType::Bound => {
                        assert!(n == 0 || n == 2);
                        if n == 2 {
                            assert!((c[FR] && c[FL]) || (c[RR] && c[RL]));
                        }
                    }
                    GaitType::Gallop => assert!(n <= 2),
                    GaitType::Recovery => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn duty_factors() {
        let s = GaitSchedules::default();
        assert_eq!(s.trot.duty_factor(FR), 0.5);
        assert!((s.bound.duty_factor(RR) - 0.4).abs() < 1e-12);
        assert_eq!(s.gallop.duty_factor(FL), 0.25);
    }

    #[test]
    fn overlapping_intervals_rejected() {
        let p = ContactPattern::new([vec![[0.0, 0.5], [0.4, 0.6]], vec![], vec![], vec![]]);
        assert!(p.is_err());
        let p = ContactPattern::new([vec![[0.5, 1.2]], vec![], vec![], vec![]]);
        assert!(p.is_err());
    }

    #[test]
    fn gait_names_parse() {
        for g in GaitType::ALL {
            assert_eq!(g.name().parse::<GaitType>().unwrap(), g);
        }
        assert!("canter".parse::<GaitType>().is_err());
    }
}
