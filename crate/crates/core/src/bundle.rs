//! On-disk expert bundle: one checkpoint per skill plus `manifest.toml`
//! recording observation layouts, phase frequencies and action offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorNet;
use crate::gait::{GaitSchedules, GaitType};
use crate::geometry::JointVector;
use crate::nn::Mlp;
use crate::observation::{LOCOMOTION_DIM, PROPRIO_DIM};
use crate::policy::{CompositePolicy, ExpertSet, GatingNetwork, GaussianActor};

pub const MANIFEST: &str = "manifest.toml";
pub const BUNDLE_VERSION: u32 = 1;
pub const GATING_FILE: &str = "gating.ckpt";
pub const ESTIMATOR_FILE: &str = "estimator.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub gait: GaitType,
    pub file: String,
    pub obs_dim: usize,
    pub obs_layout: String,
    pub frequency: f64,
    pub action_offset: JointVector,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub experts: Vec<ManifestEntry>,
}

pub fn checkpoint_name(gait: GaitType) -> String {
    format!("{}.ckpt", gait.name())
}

pub fn obs_layout(gait: GaitType) -> &'static str {
    if gait.is_periodic() {
        "gravity3,ang_vel3,lin_vel_heading3,joint_pos12,sin_cos_phase2"
    } else {
        "gravity3,ang_vel3,lin_vel_heading3,joint_pos12"
    }
}

fn manifest_path(dir: &Path) -> std::path::PathBuf {
    dir.join(MANIFEST)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = manifest_path(dir.as_ref());
    if !path.exists() {
        return Ok(Manifest {
            version: BUNDLE_VERSION,
            experts: Vec::new(),
        });
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e.message())))?;
    if m.version != BUNDLE_VERSION {
        return Err(Error::Checkpoint(format!("unsupported bundle version {}", m.version)));
    }
    Ok(m)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = manifest_path(dir);
    let text = toml::to_string_pretty(m).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes (or replaces) one expert and its manifest entry.
pub fn save_expert(
    dir: impl AsRef<Path>,
    gait: GaitType,
    actor: &GaussianActor,
    schedules: &GaitSchedules,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = checkpoint_name(gait);
    actor.net.save(dir.join(&file))?;
    let mut m = read_manifest(dir)?;
    m.version = BUNDLE_VERSION;
    m.experts.retain(|e| e.gait != gait);
    m.experts.push(ManifestEntry {
        gait,
        file,
        obs_dim: actor.net.input_size(),
        obs_layout: obs_layout(gait).to_string(),
        frequency: schedules.frequency(gait),
        action_offset: actor.action_offset,
    });
    m.experts.sort_by_key(|e| e.gait.index());
    write_manifest(dir, &m)
}

pub fn load_expert(dir: impl AsRef<Path>, gait: GaitType) -> Result<Option<GaussianActor>> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let Some(entry) = m.experts.iter().find(|e| e.gait == gait) else {
        return Ok(None);
    };
    let net = Mlp::load(dir.join(&entry.file))?;
    let want = if gait.is_periodic() {
        LOCOMOTION_DIM
    } else {
        PROPRIO_DIM
    };
    if net.input_size() != want || entry.obs_dim != want {
        return Err(Error::Checkpoint(format!(
            "{gait} checkpoint expects {} inputs, layout needs {want}",
            net.input_size()
        )));
    }
    Ok(Some(GaussianActor::from_net(net, entry.action_offset)?))
}

pub fn save_bundle(dir: impl AsRef<Path>, experts: &ExpertSet, schedules: &GaitSchedules) -> Result<()> {
    for gait in GaitType::ALL {
        save_expert(dir.as_ref(), gait, experts.get(gait), schedules)?;
    }
    Ok(())
}

/// Loads all five experts. Missing ones are an error unless `fill` supplies
/// a stand-in.
pub fn load_bundle(
    dir: impl AsRef<Path>,
    mut fill: Option<&mut dyn FnMut(GaitType) -> GaussianActor>,
) -> Result<ExpertSet> {
    let mut experts = Vec::with_capacity(GaitType::ALL.len());
    for gait in GaitType::ALL {
        match load_expert(dir.as_ref(), gait)? {
            Some(a) => experts.push(a),
            None => match fill.as_mut() {
                Some(f) => experts.push(f(gait)),
                None => {
                    return Err(Error::Checkpoint(format!(
                        "bundle {} has no {gait} expert",
                        dir.as_ref().display()
                    )))
                }
            },
        }
    }
    ExpertSet::new(experts)
}

pub fn save_gating(dir: impl AsRef<Path>, gating: &GatingNetwork) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    gating.net.save(dir.join(GATING_FILE))
}

pub fn load_gating(dir: impl AsRef<Path>) -> Result<GatingNetwork> {
    GatingNetwork::from_net(Mlp::load(dir.as_ref().join(GATING_FILE))?)
}

/// All five experts plus the gating network.
pub fn load_composite(dir: impl AsRef<Path>) -> Result<CompositePolicy> {
    Ok(CompositePolicy {
        experts: load_bundle(dir.as_ref(), None)?,
        gating: load_gating(dir.as_ref())?,
    })
}

pub fn save_estimator(path: impl AsRef<Path>, estimator: &EstimatorNet) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    estimator.net.save(path)
}

pub fn load_estimator(path: impl AsRef<Path>) -> Result<EstimatorNet> {
    EstimatorNet::from_net(Mlp::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, Stream};

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = ExpertSet::random(&[8], [0.1; 12], &mut RngStream::new(0, Stream::Init));
        let sched = GaitSchedules::default();
        save_bundle(dir.path(), &set, &sched).unwrap();
        let back = load_bundle(dir.path(), None).unwrap();
        assert_eq!(back, set);
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.experts.len(), 5);
        assert_eq!(m.experts[3].frequency, 2.5);
        assert_eq!(m.experts[0].obs_dim, 21);
        assert_eq!(m.experts[1].obs_dim, 23);
    }

    #[test]
    fn composite_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(5, Stream::Init);
        let experts = ExpertSet::random(&[8], [0.2; 12], &mut rng);
        let gating = GatingNetwork::new(&[8], &mut rng);
        save_bundle(dir.path(), &experts, &GaitSchedules::default()).unwrap();
        assert!(load_composite(dir.path()).is_err());
        save_gating(dir.path(), &gating).unwrap();
        let back = load_composite(dir.path()).unwrap();
        assert_eq!(back, CompositePolicy { experts, gating });
        let est = EstimatorNet::new(&[4], &mut rng);
        save_estimator(dir.path().join("e/est.ckpt"), &est).unwrap();
        assert_eq!(load_estimator(dir.path().join("e/est.ckpt")).unwrap(), est);
        assert!(load_gating(dir.path().join("e")).is_err());
    }

    #[test]
    fn missing_expert_needs_fill() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(1, Stream::Init);
        let trot = GaussianActor::for_gait(GaitType::Trot, &[8], [0.0; 12], &mut rng);
        save_expert(dir.path(), GaitType::Trot, &trot, &GaitSchedules::default()).unwrap();
        assert!(load_bundle(dir.path(), None).is_err());
        let mut fill = |g: GaitType| GaussianActor::for_gait(g, &[4], [0.0; 12], &mut RngStream::new(2, Stream::Init));
        let set = load_bundle(dir.path(), Some(&mut fill)).unwrap();
        assert_eq!(set.get(GaitType::Trot), &trot);
    }
}
