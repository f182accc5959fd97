//! JSON-lines trajectory export. Each control step becomes one object; floats
//! are written with shortest round-trip formatting and parsed back exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episode::{StepRecord, Trajectory};
use crate::error::{Error, Result};
use crate::gait::GaitType;
use crate::geometry::NUM_LEGS;
use crate::policy::NUM_EXPERTS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRecord {
    pub t: f64,
    pub base_pos: [f64; 3],
    pub base_quat: [f64; 4],
    pub base_vel: [f64; 3],
    pub joint_pos: [f64; 12],
    pub action: [f64; 12],
    pub reward_terms: BTreeMap<String, f64>,
    pub expert_weights: [f64; NUM_EXPERTS],
    pub contacts: [bool; NUM_LEGS],
    pub body_contact: bool,
    pub ref_gait: GaitType,
    pub goal: [f64; 2],
}

impl From<&StepRecord> for ExportRecord {
    fn from(r: &StepRecord) -> Self {
        ExportRecord {
            t: r.t,
            base_pos: r.state.base_position.to_array(),
            base_quat: r.state.base_orientation.to_array(),
            base_vel: r.state.base_lin_vel.to_array(),
            joint_pos: r.state.joint_pos,
            action: r.action,
            reward_terms: r.reward_terms.clone(),
            expert_weights: r.expert_weights,
            contacts: r.state.foot_contact,
            body_contact: r.state.body_contact,
            ref_gait: r.ref_gait,
            goal: r.goal,
        }
    }
}

pub fn to_records(trajectory: &Trajectory) -> Vec<ExportRecord> {
    trajectory.steps.iter().map(ExportRecord::from).collect()
}

fn write_lines<'a>(path: &Path, records: impl Iterator<Item = ExportRecord> + 'a) -> Result<usize> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for rec in records {
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

/// Returns the number of lines written.
pub fn export_trajectory(trajectory: &Trajectory, path: impl AsRef<Path>) -> Result<usize> {
    write_lines(path.as_ref(), trajectory.steps.iter().map(ExportRecord::from))
}

/// Concatenates several episodes into one file, in order.
pub fn export_trajectories(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<usize> {
    write_lines(
        path.as_ref(),
        trajectories.iter().flat_map(|t| t.steps.iter().map(ExportRecord::from)),
    )
}

pub fn read_export(path: impl AsRef<Path>) -> Result<Vec<ExportRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Checkpoint(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{run_episode, ConstantSource, EpisodeConfig, EpisodeOptions, Task};
    use crate::reward::{Goal, RewardEngine, SwitchCriteria, TaskReferences};
    use crate::sim::{PdGains, ResetMode, SimConfig, Simulator};

    fn episode(steps: usize) -> Trajectory {
        let mut sim = Simulator::new(SimConfig::default(), PdGains::default());
        let engine = RewardEngine::new(TaskReferences::for_sim(&sim.config), Default::default());
        let hold = sim.config.nominal_hold_action(&sim.gains);
        let task = Task::Multi {
            goal: Goal::at(3.0, -1.0),
            criteria: SwitchCriteria::default(),
        };
        let cfg = EpisodeConfig {
            steps,
            ..EpisodeConfig::new(task, ResetMode::Nominal)
        };
        run_episode(
            &mut sim,
            &engine,
            &mut ConstantSource { action: hold },
            &cfg,
            4,
            EpisodeOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn one_line_per_step_and_exact_round_trip() {
        let traj = episode(30);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.jsonl");
        assert_eq!(export_trajectory(&traj, &path).unwrap(), 30);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 30);
        let back = read_export(&path).unwrap();
        assert_eq!(back, to_records(&traj));
        for (a, b) in back.iter().zip(&traj.steps) {
            assert_eq!(
                a.base_quat.map(f64::to_bits),
                b.state.base_orientation.to_array().map(f64::to_bits)
            );
            assert!(a.reward_terms.contains_key("r_g"));
        }
    }

    #[test]
    fn empty_trajectory_gives_empty_file() {
        let traj = episode(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        assert_eq!(export_trajectory(&traj, &path).unwrap(), 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        assert!(read_export(&path).unwrap().is_empty());
    }

    #[test]
    fn unwritable_path_names_path() {
        let traj = episode(1);
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = export_trajectory(&traj, blocker.join("out.jsonl")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
