//! Supervised base-velocity estimator over a three-step proprioceptive
//! history.
//!
//! Input layout (66 values, histories ordered newest first):
//!
//! | block                         | size |
//! |-------------------------------|------|
//! | gravity at t, t-1, t-2        | 9    |
//! | angular velocity at t, t-1, t-2 | 9  |
//! | joint positions at t, t-1, t-2 | 36  |
//! | joint velocities at t         | 12   |
//!
//! Targets are heading-frame linear velocities at `t`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::episode::{
    run_episode, ActionSource, ConstantSource, EpisodeConfig, EpisodeOptions, ScriptedTrotSource, Task,
};
use crate::error::{Error, Result};
use crate::gait::GaitType;
use crate::nn::{Adam, Init, Matrix, Mlp};
use crate::reward::{RewardEngine, RewardWeights};
use crate::rng::{RngStream, Stream};
use crate::sim::{ResetMode, RobotState, Simulator};

pub const ESTIMATOR_INPUT_DIM: usize = 66;
pub const ESTIMATOR_OUTPUT_DIM: usize = 3;
pub const HISTORY_LEN: usize = 3;

/// `history[0]` is the newest state.
pub fn build_estimator_input(history: &[RobotState]) -> Result<[f64; ESTIMATOR_INPUT_DIM]> {
    if history.len() < HISTORY_LEN {
        return Err(Error::InvalidArgument(format!(
            "estimator needs {HISTORY_LEN} states, got {}",
            history.len()
        )));
    }
    let mut out = [0.0; ESTIMATOR_INPUT_DIM];
    let mut k = 0;
    let mut put = |vals: &[f64]| {
        out[k..k + vals.len()].copy_from_slice(vals);
        k += vals.len();
    };
    for s in &history[..HISTORY_LEN] {
        put(&s.gravity_in_base().to_array());
    }
    for s in &history[..HISTORY_LEN] {
        put(&s.ang_vel_base().to_array());
    }
    for s in &history[..HISTORY_LEN] {
        put(&s.joint_pos);
    }
    put(&history[0].joint_vel);
    debug_assert_eq!(k, ESTIMATOR_INPUT_DIM);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorNet {
    pub net: Mlp,
}

impl EstimatorNet {
    pub fn new(hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![ESTIMATOR_INPUT_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(ESTIMATOR_OUTPUT_DIM);
        EstimatorNet {
            net: Mlp::new(&sizes, Init::default(), rng),
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.input_size() != ESTIMATOR_INPUT_DIM || net.output_size() != ESTIMATOR_OUTPUT_DIM {
            return Err(Error::Checkpoint(format!(
                "estimator must map 66 -> 3, got {:?}",
                net.sizes()
            )));
        }
        Ok(EstimatorNet { net })
    }

    pub fn estimate(&self, history: &[RobotState]) -> Result<[f64; 3]> {
        let x = build_estimator_input(history)?;
        let y = self.net.forward(&x)?;
        Ok([y[0], y[1], y[2]])
    }
}

pub fn estimate_velocity(net: &EstimatorNet, history: &[RobotState]) -> Result<[f64; 3]> {
    net.estimate(history)
}

/// Row-major samples tagged with the episode they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<[f64; ESTIMATOR_INPUT_DIM]>,
    pub targets: Vec<[f64; 3]>,
    pub episode: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, input: [f64; ESTIMATOR_INPUT_DIM], target: [f64; 3], episode: u32) {
        self.inputs.push(input);
        self.targets.push(target);
        self.episode.push(episode);
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        let mut d = Dataset::default();
        for &i in idx {
            d.push(self.inputs[i], self.targets[i], self.episode[i]);
        }
        d
    }

    /// Holds out roughly a tenth of the episodes, chosen by a seeded shuffle.
    pub fn split_by_episode(&self, seed: u64) -> (Dataset, Dataset) {
        let mut ids: Vec<u32> = self.episode.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut RngStream::new(seed, Stream::Dataset));
        let n_val = if ids.len() >= 2 { ids.len().div_ceil(10) } else { 0 };
        let val: std::collections::BTreeSet<u32> = ids[..n_val].iter().copied().collect();
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for i in 0..self.len() {
            if val.contains(&self.episode[i]) {
                va.push(i);
            } else {
                tr.push(i);
            }
        }
        (self.subset(&tr), self.subset(&va))
    }

    /// CSV with header `episode,x0..x65,vx,vy,vz`; floats use shortest
    /// round-trip formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut header = vec!["episode".to_string()];
        header.extend((0..ESTIMATOR_INPUT_DIM).map(|i| format!("x{i}")));
        header.extend(["vx", "vy", "vz"].map(String::from));
        let mut body = header.join(",");
        body.push('\n');
        for i in 0..self.len() {
            let mut row = vec![self.episode[i].to_string()];
            row.extend(self.inputs[i].iter().chain(&self.targets[i]).map(|v| format!("{v:?}")));
            body.push_str(&row.join(","));
            body.push('\n');
        }
        w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut d = Dataset::default();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if n == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + ESTIMATOR_INPUT_DIM + 3 {
                return Err(Error::DimensionMismatch {
                    expected: 1 + ESTIMATOR_INPUT_DIM + 3,
                    actual: fields.len(),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", n + 1)))
            };
            let ep = fields[0]
                .parse::<u32>()
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", n + 1)))?;
            let mut x = [0.0; ESTIMATOR_INPUT_DIM];
            for (i, v) in x.iter_mut().enumerate() {
                *v = parse(fields[1 + i])?;
            }
            let y = [
                parse(fields[1 + ESTIMATOR_INPUT_DIM])?,
                parse(fields[2 + ESTIMATOR_INPUT_DIM])?,
                parse(fields[3 + ESTIMATOR_INPUT_DIM])?,
            ];
            d.push(x, y, ep);
        }
        Ok(d)
    }
}

/// Runs `episodes` episodes cycling through `sources`, recording one pair per
/// step once three states of history exist.
pub fn collect_dataset(
    sim: &mut Simulator,
    engine: &RewardEngine,
    sources: &mut [(&mut dyn ActionSource, EpisodeConfig)],
    episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut data = Dataset::default();
    if sources.is_empty() {
        return Ok(data);
    }
    let mut seeds = RngStream::new(seed, Stream::Dataset);
    for ep in 0..episodes {
        let (source, cfg) = &mut sources[ep % sources.len()];
        let traj = run_episode(sim, engine, source, cfg, seeds.child_seed(), EpisodeOptions::default())?;
        let states: Vec<&RobotState> = traj.steps.iter().map(|s| &s.state).collect();
        for t in 2..states.len() {
            let hist = [states[t].clone(), states[t - 1].clone(), states[t - 2].clone()];
            let v = states[t].lin_vel_heading();
            data.push(build_estimator_input(&hist)?, v.to_array(), ep as u32);
        }
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            hidden: vec![256, 256],
            epochs: 50,
            lr: 1e-3,
            weight_decay: 5e-4,
            batch: 1024,
        }
    }
}

fn to_matrices(d: &Dataset, idx: &[usize]) -> (Matrix, Matrix) {
    let mut x = Matrix::zeros(idx.len(), ESTIMATOR_INPUT_DIM);
    let mut y = Matrix::zeros(idx.len(), 3);
    for (r, &i) in idx.iter().enumerate() {
        x.row_mut(r).copy_from_slice(&d.inputs[i]);
        y.row_mut(r).copy_from_slice(&d.targets[i]);
    }
    (x, y)
}

/// Per-axis mean squared error of `net` on `data`.
pub fn per_axis_mse(net: &EstimatorNet, data: &Dataset) -> Result<[f64; 3]> {
    if data.is_empty() {
        return Ok([0.0; 3]);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut err = [0.0; 3];
    for chunk in idx.chunks(4096) {
        let (x, y) = to_matrices(data, chunk);
        let out = net.net.forward_batch(&x)?.into_output();
        for r in 0..chunk.len() {
            for a in 0..3 {
                err[a] += (out.row(r)[a] - y.row(r)[a]).powi(2);
            }
        }
    }
    Ok(err.map(|e| e / data.len() as f64))
}

pub fn mse(net: &EstimatorNet, data: &Dataset) -> Result<f64> {
    Ok(per_axis_mse(net, data)?.iter().sum::<f64>() / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    /// Held-out MSE after each epoch.
    pub validation_mse: Vec<f64>,
    pub train_mse: Vec<f64>,
    pub validation_per_axis: [f64; 3],
}

/// Minibatch MSE regression on an episode-wise 90/10 split.
pub fn train_estimator(data: &Dataset, config: &EstimatorConfig, seed: u64) -> Result<(EstimatorNet, EstimatorReport)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("estimator dataset is empty".into()));
    }
    let mut init_rng = RngStream::new(seed, Stream::Init);
    let mut net = EstimatorNet::new(&config.hidden, &mut init_rng);
    let (train, val) = data.split_by_episode(seed);
    let mut adam = Adam::new(net.net.param_count(), config.lr, config.weight_decay);
    let mut shuffle_rng = RngStream::new(seed, Stream::Replay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = EstimatorReport {
        validation_mse: Vec::with_capacity(config.epochs),
        train_mse: Vec::with_capacity(config.epochs),
        validation_per_axis: [0.0; 3],
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch.max(1)) {
            let (x, y) = to_matrices(&train, chunk);
            let n = chunk.len() as f64;
            let (loss, grads) = net.net.gradients(&x, |out| {
                let mut g = Matrix::zeros(out.rows, 3);
                let mut loss = 0.0;
                for (i, (o, t)) in out.data.iter().zip(&y.data).enumerate() {
                    let e = o - t;
                    loss += e * e;
                    g.data[i] = 2.0 * e / (3.0 * n);
                }
                (loss / (3.0 * n), g)
            })?;
            epoch_loss += loss * n;
            adam.update(net.net.params_mut(), &grads);
        }
        report.train_mse.push(epoch_loss / train.len().max(1) as f64);
        let held = if val.is_empty() { &train } else { &val };
        report.validation_mse.push(mse(&net, held)?);
    }
    let held = if val.is_empty() { &train } else { &val };
    report.validation_per_axis = per_axis_mse(&net, held)?;
    Ok((net, report))
}

/// Stride amplitudes of the scripted trots; negative values walk backwards.
pub const TROT_STRIDES: [f64; 4] = [0.1, 0.2, 0.3, -0.2];

/// Standing and open-loop trotting episodes from a nominal start, cycling
/// stand, then each stride of [`TROT_STRIDES`].
pub fn collect_stand_trot(sim: &mut Simulator, engine: &RewardEngine, episodes: usize, seed: u64) -> Result<Dataset> {
    let hold = sim.config.nominal_hold_action(&sim.gains);
    let frequency = engine.schedules.frequency(GaitType::Trot);
    let single = |gait| {
        EpisodeConfig::new(
            Task::Single {
                gait,
                weights: RewardWeights::preset(gait),
            },
            ResetMode::Nominal,
        )
    };
    let mut stand = ConstantSource { action: hold };
    let mut trots: Vec<ScriptedTrotSource> = TROT_STRIDES
        .iter()
        .map(|&stride| ScriptedTrotSource {
            hold,
            frequency,
            lift: 0.4,
            stride,
        })
        .collect();
    let mut sources: Vec<(&mut dyn ActionSource, EpisodeConfig)> = vec![(&mut stand, single(GaitType::Recovery))];
    for t in trots.iter_mut() {
        sources.push((t, single(GaitType::Trot)));
    }
    collect_dataset(sim, engine, &mut sources, episodes, seed)
}

/// Constant-target dataset with random inputs, one pseudo-episode per 100 rows.
pub fn synthetic_constant_dataset(n: usize, velocity: [f64; 3], seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed, Stream::Dataset);
    let mut d = Dataset::default();
    for i in 0..n {
        let x: [f64; ESTIMATOR_INPUT_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        d.push(x, velocity, (i / 100) as u32);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{ConstantSource, Task};
    use crate::gait::GaitType;
    use crate::reward::{RewardWeights, TaskReferences};
    use crate::sim::ResetMode;

    fn states() -> Vec<RobotState> {
        let sim = Simulator::default();
        let mut rng = RngStream::new(0, Stream::Sim);
        (0..3).map(|_| sim.reset(ResetMode::RandomFall, &mut rng)).collect()
    }

    #[test]
    fn input_layout() {
        let h = states();
        let x = build_estimator_input(&h).unwrap();
        assert_eq!(x.len(), 66);
        assert_eq!(&x[0..3], &h[0].gravity_in_base().to_array());
        assert_eq!(&x[6..9], &h[2].gravity_in_base().to_array());
        assert_eq!(&x[9..12], &h[0].ang_vel_base().to_array());
        assert_eq!(&x[18..30], &h[0].joint_pos);
        assert_eq!(&x[42..54], &h[2].joint_pos);
        assert_eq!(&x[54..66], &h[0].joint_vel);
        assert!(build_estimator_input(&h[..2]).is_err());
    }

    #[test]
    fn identical_history_blocks_and_order_sensitivity() {
        let h = states();
        let same = vec![h[0].clone(); 3];
        let x = build_estimator_input(&same).unwrap();
        assert_eq!(x[0..3], x[3..6]);
        assert_eq!(x[18..30], x[30..42]);
        let perm = vec![h[1].clone(), h[0].clone(), h[2].clone()];
        assert_ne!(
            build_estimator_input(&h).unwrap(),
            build_estimator_input(&perm).unwrap()
        );
    }

    #[test]
    fn dataset_counts() {
        let mut sim = Simulator::default();
        let engine = RewardEngine::new(TaskReferences::for_sim(&sim.config), Default::default());
        let mut hold = ConstantSource {
            action: sim.config.nominal_hold_action(&sim.gains),
        };
        let mut cfg = EpisodeConfig::new(
            Task::Single {
                gait: GaitType::Recovery,
                weights: RewardWeights::RECOVERY,
            },
            ResetMode::Nominal,
        );
        cfg.steps = 20;
        let mut sources: Vec<(&mut dyn ActionSource, EpisodeConfig)> = vec![(&mut hold, cfg)];
        let d = collect_dataset(&mut sim, &engine, &mut sources, 3, 0).unwrap();
        assert_eq!(d.len(), 3 * 18);
        let empty = collect_dataset(&mut sim, &engine, &mut sources, 0, 0).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let d = synthetic_constant_dataset(25, [0.1, -0.2, 1.0 / 3.0], 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 70));
        assert_eq!(Dataset::read_csv(&p).unwrap(), d);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let d = synthetic_constant_dataset(300, [0.5, 0.0, 0.0], 2);
        let cfg = EstimatorConfig {
            epochs: 0,
            hidden: vec![16],
            ..Default::default()
        };
        let (net, report) = train_estimator(&d, &cfg, 4).unwrap();
        let fresh = EstimatorNet::new(&[16], &mut RngStream::new(4, Stream::Init));
        assert_eq!(net, fresh);
        assert!(report.validation_mse.is_empty());
    }

    #[test]
    fn split_is_by_episode() {
        let d = synthetic_constant_dataset(2000, [0.0; 3], 3);
        let (tr, va) = d.split_by_episode(9);
        assert_eq!(tr.len() + va.len(), 2000);
        assert_eq!(va.len(), 200);
        assert!(va.episode.iter().all(|e| !tr.episode.contains(e)));
    }
}
