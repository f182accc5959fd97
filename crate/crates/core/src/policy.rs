//! Gaussian skill policies, the gating network and their multiplicative
//! composition.
//!
//! For expert `i` with per-dimension mean `μ_i` and standard deviation `σ_i`
//! and gating weight `w_i ≥ 0`, the composite Gaussian is
//!
//! ```text
//! σ = (Σ_i w_i / σ_i)^-1
//! μ = σ · Σ_i (w_i / σ_i) μ_i
//! ```
//!
//! During gating training only the gating parameters receive gradients; the
//! experts are frozen.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gait::GaitType;
use crate::geometry::{JointVector, NUM_JOINTS};
use crate::nn::{ForwardCache, Init, Matrix, Mlp};
use crate::observation::{expert_slice, gating_slice, GATING_DIM, LOCOMOTION_DIM, MULTI_DIM, PROPRIO_DIM};
use crate::sim::JointLimits;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const NUM_EXPERTS: usize = 5;
const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_7; // 0.5 ln(2π)

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianActionDistribution {
    pub mean: JointVector,
    pub std: JointVector,
}

impl GaussianActionDistribution {
    pub fn new(mean: JointVector, std: JointVector) -> Result<Self> {
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("standard deviations must be positive".into()));
        }
        Ok(GaussianActionDistribution { mean, std })
    }

    pub fn log_prob(&self, action: &JointVector) -> f64 {
        (0..NUM_JOINTS)
            .map(|j| {
                let z = (action[j] - self.mean[j]) / self.std[j];
                -0.5 * z * z - self.std[j].ln() - HALF_LOG_TAU
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| s.ln() + 0.5 + HALF_LOG_TAU).sum()
    }
}

/// Per-dimension Gaussian draw clamped to joint limits; the log-probability
/// is that of the unclamped draw.
pub fn sample_action(
    dist: &GaussianActionDistribution,
    limits: &JointLimits,
    rng: &mut impl Rng,
) -> (JointVector, f64) {
    let raw: JointVector = std::array::from_fn(|j| {
        let eps: f64 = rng.sample(StandardNormal);
        dist.mean[j] + dist.std[j] * eps
    });
    let log_prob = dist.log_prob(&raw);
    (limits.clamp(&raw), log_prob)
}

/// Evaluation-mode action: the (clamped) mean.
pub fn mean_action(dist: &GaussianActionDistribution, limits: &JointLimits) -> JointVector {
    limits.clamp(&dist.mean)
}

/// Multiplicative composition of Gaussian experts.
pub fn compose(dists: &[GaussianActionDistribution], weights: &[f64]) -> Result<GaussianActionDistribution> {
    if dists.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: dists.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("composition weights must be >= 0".into()));
    }
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mut active = weights.iter().enumerate().filter(|(_, w)| **w > 0.0);
    if let (Some((i, w)), None) = (active.next(), active.next()) {
        let d = &dists[i];
        return Ok(GaussianActionDistribution {
            mean: d.mean,
            std: d.std.map(|s| s / w),
        });
    }
    let mut mean = [0.0; NUM_JOINTS];
    let mut std = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for (d, w) in dists.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            let c = w / d.std[j];
            precision += c;
            weighted += c * d.mean[j];
        }
        std[j] = 1.0 / precision;
        mean[j] = weighted * std[j];
    }
    Ok(GaussianActionDistribution { mean, std })
}

/// Gradient of a scalar loss through the composition: given `dL/dμ` and
/// `dL/dσ` of the composite, returns `dL/dw_i`.
pub fn compose_weight_gradient(
    dists: &[GaussianActionDistribution],
    weights: &[f64],
    d_mean: &JointVector,
    d_std: &JointVector,
) -> Vec<f64> {
    let mut dw = vec![0.0; dists.len()];
    for j in 0..NUM_JOINTS {
        let precision: f64 = dists.iter().zip(weights).map(|(d, w)| w / d.std[j]).sum();
        let mean = dists
            .iter()
            .zip(weights)
            .map(|(d, w)| w / d.std[j] * d.mean[j])
            .sum::<f64>()
            / precision;
        for (i, d) in dists.iter().enumerate() {
            let inv = 1.0 / (d.std[j] * precision);
            dw[i] += d_mean[j] * (d.mean[j] - mean) * inv - d_std[j] * inv / precision;
        }
    }
    dw
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `dL/dz` from `dL/dw` for `w = softmax(z)`.
pub fn softmax_backward(weights: &[f64], dw: &[f64]) -> Vec<f64> {
    let dot: f64 = weights.iter().zip(dw).map(|(w, g)| w * g).sum();
    weights.iter().zip(dw).map(|(w, g)| w * (g - dot)).collect()
}

/// Anything trainable by SAC that maps a batch of observations to a diagonal
/// Gaussian over joint targets.
pub trait TrainableActor {
    type Cache;

    fn obs_dim(&self) -> usize;

    /// Means and standard deviations, one row per observation.
    fn dist_batch(&self, obs: &Matrix) -> Result<(Matrix, Matrix, Self::Cache)>;

    /// Parameter gradient from upstream `dL/dmean` and `dL/dstd`.
    fn backward(&self, cache: &Self::Cache, d_mean: &Matrix, d_std: &Matrix) -> Vec<f64>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Distribution for one observation plus expert weights when the actor
    /// is a composite.
    fn act_distribution(&self, obs: &[f64]) -> Result<(GaussianActionDistribution, Option<Vec<f64>>)>;
}

/// Single-skill Gaussian policy: the network emits 12 mean offsets and 12
/// raw log standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianActor {
    pub net: Mlp,
    /// Added to the mean head; the nominal hold pose.
    pub action_offset: JointVector,
}

impl GaussianActor {
    pub fn new(obs_dim: usize, hidden: &[usize], action_offset: JointVector, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * NUM_JOINTS);
        GaussianActor {
            net: Mlp::new(&sizes, Init { output_scale: 0.01 }, rng),
            action_offset,
        }
    }

    /// Shifts the log-std head's biases so the initial standard deviation is
    /// roughly `exp(log_std)`.
    pub fn with_initial_log_std(mut self, log_std: f64) -> Self {
        let last = self.net.num_layers() - 1;
        let (_, b) = self.net.layer_range(last);
        for p in &mut self.net.params_mut()[b.start + NUM_JOINTS..b.end] {
            *p += log_std;
        }
        self
    }

    pub fn for_gait(gait: GaitType, hidden: &[usize], action_offset: JointVector, rng: &mut impl Rng) -> Self {
        let dim = if gait.is_periodic() {
            LOCOMOTION_DIM
        } else {
            PROPRIO_DIM
        };
        Self::new(dim, hidden, action_offset, rng)
    }

    pub fn from_net(net: Mlp, action_offset: JointVector) -> Result<Self> {
        if net.output_size() != 2 * NUM_JOINTS {
            return Err(Error::DimensionMismatch {
                expected: 2 * NUM_JOINTS,
                actual: net.output_size(),
            });
        }
        Ok(GaussianActor { net, action_offset })
    }

    fn head_to_dist(&self, out: &[f64]) -> GaussianActionDistribution {
        GaussianActionDistribution {
            mean: std::array::from_fn(|j| self.action_offset[j] + out[j]),
            std: std::array::from_fn(|j| out[NUM_JOINTS + j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp()),
        }
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<GaussianActionDistribution> {
        Ok(self.head_to_dist(&self.net.forward(obs)?))
    }
}

/// Distribution of `expert` for an already assembled observation.
pub fn expert_distribution(expert: &GaussianActor, obs: &[f64]) -> Result<GaussianActionDistribution> {
    expert.distribution(obs)
}

impl TrainableActor for GaussianActor {
    type Cache = ForwardCache;

    fn obs_dim(&self) -> usize {
        self.net.input_size()
    }

    fn dist_batch(&self, obs: &Matrix) -> Result<(Matrix, Matrix, ForwardCache)> {
        let cache = self.net.forward_batch(obs)?;
        let out = cache.output();
        let mut mean = Matrix::zeros(obs.rows, NUM_JOINTS);
        let mut std = Matrix::zeros(obs.rows, NUM_JOINTS);
        for r in 0..obs.rows {
            let d = self.head_to_dist(out.row(r));
            mean.row_mut(r).copy_from_slice(&d.mean);
            std.row_mut(r).copy_from_slice(&d.std);
        }
        Ok((mean, std, cache))
    }

    fn backward(&self, cache: &ForwardCache, d_mean: &Matrix, d_std: &Matrix) -> Vec<f64> {
        let out = cache.output();
        let mut d_out = Matrix::zeros(out.rows, 2 * NUM_JOINTS);
        for r in 0..out.rows {
            let raw = out.row(r);
            let (dm, ds) = (d_mean.row(r), d_std.row(r));
            let row = d_out.row_mut(r);
            for j in 0..NUM_JOINTS {
                row[j] = dm[j];
                let ls = raw[NUM_JOINTS + j];
                let clamped = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let g = ds[j] * clamped.exp();
                // past a bound, only let through steps that head back inside
                let inward = (ls > LOG_STD_MAX && g > 0.0) || (ls < LOG_STD_MIN && g < 0.0);
                if clamped == ls || inward {
                    row[NUM_JOINTS + j] = g;
                }
            }
        }
        let mut grads = vec![0.0; self.net.param_count()];
        self.net.backward(cache, &d_out, &mut grads);
        grads
    }

    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn act_distribution(&self, obs: &[f64]) -> Result<(GaussianActionDistribution, Option<Vec<f64>>)> {
        Ok((self.distribution(obs)?, None))
    }
}

/// Network producing five non-negative expert weights that sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingNetwork {
    pub net: Mlp,
}

impl GatingNetwork {
    pub fn new(hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![GATING_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(NUM_EXPERTS);
        GatingNetwork {
            net: Mlp::new(&sizes, Init::default(), rng),
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.input_size() != GATING_DIM || net.output_size() != NUM_EXPERTS {
            return Err(Error::Checkpoint(format!(
                "gating network must map {GATING_DIM} -> {NUM_EXPERTS}, got {:?}",
                net.sizes()
            )));
        }
        Ok(GatingNetwork { net })
    }

    /// Softmax weights from the 21 proprioceptive values and the 2-d goal offset.
    pub fn weights(&self, gating_obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.forward(gating_obs)?))
    }
}

pub fn gating_weights(gating: &GatingNetwork, proprio: &[f64], goal_offset: [f64; 2]) -> Result<Vec<f64>> {
    let mut input = proprio.to_vec();
    input.extend_from_slice(&goal_offset);
    gating.weights(&input)
}

/// Five frozen experts in [`GaitType::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSet {
    experts: Vec<GaussianActor>,
}

impl ExpertSet {
    pub fn new(experts: Vec<GaussianActor>) -> Result<Self> {
        if experts.len() != NUM_EXPERTS {
            return Err(Error::DimensionMismatch {
                expected: NUM_EXPERTS,
                actual: experts.len(),
            });
        }
        for (gait, e) in GaitType::ALL.iter().zip(&experts) {
            let want = if gait.is_periodic() {
                LOCOMOTION_DIM
            } else {
                PROPRIO_DIM
            };
            if e.net.input_size() != want {
                return Err(Error::Checkpoint(format!(
                    "{gait} expert expects {} inputs, layout needs {want}",
                    e.net.input_size()
                )));
            }
        }
        Ok(ExpertSet { experts })
    }

    /// Freshly initialized experts, useful before any training has happened.
    pub fn random(hidden: &[usize], action_offset: JointVector, rng: &mut impl Rng) -> Self {
        ExpertSet {
            experts: GaitType::ALL
                .iter()
                .map(|g| GaussianActor::for_gait(*g, hidden, action_offset, rng))
                .collect(),
        }
    }

    pub fn get(&self, gait: GaitType) -> &GaussianActor {
        &self.experts[gait.index()]
    }

    pub fn experts(&self) -> &[GaussianActor] {
        &self.experts
    }

    pub fn distributions(&self, multi_obs: &[f64]) -> Result<Vec<GaussianActionDistribution>> {
        GaitType::ALL
            .iter()
            .zip(&self.experts)
            .map(|(g, e)| e.distribution(&expert_slice(multi_obs, *g)))
            .collect()
    }

    pub fn checksum(&self) -> u64 {
        self.experts
            .iter()
            .fold(0, |h, e| h.rotate_left(7) ^ crate::nn::checksum(e.net.params()))
    }
}

/// Gating network over frozen experts.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositePolicy {
    pub experts: ExpertSet,
    pub gating: GatingNetwork,
}

pub struct CompositeCache {
    gating: ForwardCache,
    weights: Vec<Vec<f64>>,
    dists: Vec<Vec<GaussianActionDistribution>>,
}

impl CompositePolicy {
    pub fn new(experts: ExpertSet, gating: GatingNetwork) -> Self {
        CompositePolicy { experts, gating }
    }

    /// Composite distribution and the gating weights for one multi observation.
    pub fn distribution(&self, multi_obs: &[f64]) -> Result<(GaussianActionDistribution, Vec<f64>)> {
        check_dim(multi_obs.len(), MULTI_DIM)?;
        let weights = self.gating.weights(gating_slice(multi_obs))?;
        let dists = self.experts.distributions(multi_obs)?;
        Ok((compose(&dists, &weights)?, weights))
    }

    /// Log-density of `action` under the composite and its gradient with
    /// respect to the gating parameters only.
    pub fn log_prob_and_gating_gradient(&self, multi_obs: &[f64], action: &JointVector) -> Result<(f64, Vec<f64>)> {
        check_dim(multi_obs.len(), MULTI_DIM)?;
        let input = Matrix::from_vec(1, GATING_DIM, gating_slice(multi_obs).to_vec())?;
        let cache = self.gating.net.forward_batch(&input)?;
        let weights = softmax(cache.output().row(0));
        let dists = self.experts.distributions(multi_obs)?;
        let comp = compose(&dists, &weights)?;
        let log_prob = comp.log_prob(action);
        let d_mean: JointVector = std::array::from_fn(|j| (action[j] - comp.mean[j]) / comp.std[j].powi(2));
        let d_std: JointVector = std::array::from_fn(|j| {
            let z = (action[j] - comp.mean[j]) / comp.std[j];
            (z * z - 1.0) / comp.std[j]
        });
        let dw = compose_weight_gradient(&dists, &weights, &d_mean, &d_std);
        let dz = softmax_backward(&weights, &dw);
        let mut grads = vec![0.0; self.gating.net.param_count()];
        self.gating
            .net
            .backward(&cache, &Matrix::from_vec(1, NUM_EXPERTS, dz)?, &mut grads);
        Ok((log_prob, grads))
    }
}

fn check_dim(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn composite_log_prob_and_gating_gradient(
    policy: &CompositePolicy,
    multi_obs: &[f64],
    action: &JointVector,
) -> Result<(f64, Vec<f64>)> {
    policy.log_prob_and_gating_gradient(multi_obs, action)
}

impl TrainableActor for CompositePolicy {
    type Cache = CompositeCache;

    fn obs_dim(&self) -> usize {
        MULTI_DIM
    }

    fn dist_batch(&self, obs: &Matrix) -> Result<(Matrix, Matrix, CompositeCache)> {
        check_dim(obs.cols, MULTI_DIM)?;
        let gating = self.gating.net.forward_batch(&obs.columns(0, GATING_DIM))?;
        let mut mean = Matrix::zeros(obs.rows, NUM_JOINTS);
        let mut std = Matrix::zeros(obs.rows, NUM_JOINTS);
        let mut all_w = Vec::with_capacity(obs.rows);
        let mut all_d = Vec::with_capacity(obs.rows);
        // expert forward passes batched per expert
        let mut per_expert = Vec::with_capacity(NUM_EXPERTS);
        for (gait, e) in GaitType::ALL.iter().zip(self.experts.experts()) {
            let rows: Vec<Vec<f64>> = (0..obs.rows).map(|r| expert_slice(obs.row(r), *gait)).collect();
            let (m, s, _) = e.dist_batch(&Matrix::from_rows(&rows)?)?;
            per_expert.push((m, s));
        }
        for r in 0..obs.rows {
            let w = softmax(gating.output().row(r));
            let dists: Vec<GaussianActionDistribution> = per_expert
                .iter()
                .map(|(m, s)| GaussianActionDistribution {
                    mean: m.row(r).try_into().unwrap(),
                    std: s.row(r).try_into().unwrap(),
                })
                .collect();
            let c = compose(&dists, &w)?;
            mean.row_mut(r).copy_from_slice(&c.mean);
            std.row_mut(r).copy_from_slice(&c.std);
            all_w.push(w);
            all_d.push(dists);
        }
        Ok((
            mean,
            std,
            CompositeCache {
                gating,
                weights: all_w,
                dists: all_d,
            },
        ))
    }

    fn backward(&self, cache: &CompositeCache, d_mean: &Matrix, d_std: &Matrix) -> Vec<f64> {
        let rows = cache.weights.len();
        let mut dz = Matrix::zeros(rows, NUM_EXPERTS);
        for r in 0..rows {
            let dm: JointVector = d_mean.row(r).try_into().unwrap();
            let ds: JointVector = d_std.row(r).try_into().unwrap();
            let dw = compose_weight_gradient(&cache.dists[r], &cache.weights[r], &dm, &ds);
            dz.row_mut(r).copy_from_slice(&softmax_backward(&cache.weights[r], &dw));
        }
        let mut grads = vec![0.0; self.gating.net.param_count()];
        self.gating.net.backward(&cache.gating, &dz, &mut grads);
        grads
    }

    fn params(&self) -> &[f64] {
        self.gating.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.gating.net.params_mut()
    }

    fn act_distribution(&self, obs: &[f64]) -> Result<(GaussianActionDistribution, Option<Vec<f64>>)> {
        let (d, w) = self.distribution(obs)?;
        Ok((d, Some(w)))
    }
}

/// Gaussian log-density of `x` under `N(mean, std²)`, one dimension.
pub fn normal_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn dist1(mean: f64, std: f64) -> GaussianActionDistribution {
        GaussianActionDistribution {
            mean: [mean; NUM_JOINTS],
            std: [std; NUM_JOINTS],
        }
    }

    #[test]
    fn compose_hand_examples() {
        let d = [dist1(0.0, 1.0), dist1(2.0, 1.0)];
        let c = compose(&d, &[0.5, 0.5]).unwrap();
        assert!((c.mean[0] - 1.0).abs() < 1e-15 && (c.std[0] - 1.0).abs() < 1e-15);
        let c = compose(&d, &[1.0, 1.0]).unwrap();
        assert!((c.mean[3] - 1.0).abs() < 1e-15 && (c.std[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn compose_one_hot_is_exact() {
        let d = [dist1(0.3, 0.7), dist1(-1.1, 0.2), dist1(2.0, 1.3)];
        let c = compose(&d, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c, d[1]);
    }

    #[test]
    fn compose_rejects_zero_weights() {
        let d = [dist1(0.0, 1.0), dist1(1.0, 1.0)];
        assert!(matches!(compose(&d, &[0.0, 0.0]), Err(Error::ZeroWeights)));
    }

    #[test]
    fn log_std_head_maps_through_clamp_and_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut actor = GaussianActor::new(4, &[8], [0.0; NUM_JOINTS], &mut rng);
        let (w, b) = actor.net.layer_range(1);
        for p in &mut actor.net.params_mut()[w.start..b.end] {
            *p = 0.0;
        }
        let d = actor.distribution(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(d.std.iter().all(|s| *s == 1.0));
        let (_, b) = actor.net.layer_range(1);
        for j in 0..NUM_JOINTS {
            actor.net.params_mut()[b.start + NUM_JOINTS + j] = 10.0;
        }
        let d = actor.distribution(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(d.std.iter().all(|s| (*s - 2f64.exp()).abs() < 1e-12));
        assert_eq!(d, actor.distribution(&[0.1, 0.2, 0.3, 0.4]).unwrap());
        assert!(actor.distribution(&[0.1]).is_err());
    }

    #[test]
    fn gating_softmax_examples() {
        let w = softmax(&[0.3; 5]);
        assert!(w.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let w = softmax(&[20.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(w[0] > 0.999);
    }

    #[test]
    fn gating_weights_always_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gating = GatingNetwork::new(&[32, 32], &mut rng);
        for _ in 0..10_000 {
            let p: Vec<f64> = (0..PROPRIO_DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = gating_weights(&gating, &p, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
            assert!(w.iter().all(|v| *v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_examples() {
        let limits = JointLimits {
            hip_roll: [-10.0, 10.0],
            hip_pitch: [-10.0, 10.0],
            knee: [-10.0, 10.0],
        };
        let d = dist1(0.4, 1e-9);
        let (a, _) = sample_action(&d, &limits, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(a.iter().all(|v| (v - 0.4).abs() < 1e-6));

        let d = GaussianActionDistribution {
            mean: std::array::from_fn(|j| 0.1 * j as f64 - 0.5),
            std: std::array::from_fn(|j| 0.2 + 0.05 * j as f64),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut sum = [0.0; NUM_JOINTS];
        for _ in 0..n {
            let (a, lp) = sample_action(&d, &limits, &mut rng);
            assert!(lp.is_finite());
            for j in 0..NUM_JOINTS {
                sum[j] += a[j];
            }
        }
        for j in 0..NUM_JOINTS {
            let m = sum[j] / n as f64;
            assert!((m - d.mean[j]).abs() < 4.0 * d.std[j] / (n as f64).sqrt(), "dim {j}");
        }
        let a = sample_action(&d, &limits, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_action(&d, &limits, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn samples_are_clamped_to_limits() {
        let limits = JointLimits::default();
        let d = dist1(0.0, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, _) = sample_action(&d, &limits, &mut rng);
            assert_eq!(a, limits.clamp(&a));
        }
    }

    #[test]
    fn log_prob_matches_per_dimension_density() {
        let d = GaussianActionDistribution {
            mean: std::array::from_fn(|j| j as f64 * 0.1),
            std: std::array::from_fn(|j| 0.5 + j as f64 * 0.1),
        };
        let a: JointVector = std::array::from_fn(|j| 0.3 - j as f64 * 0.05);
        let expect: f64 = (0..NUM_JOINTS)
            .map(|j| normal_log_density(a[j], d.mean[j], d.std[j]))
            .sum();
        assert!((d.log_prob(&a) - expect).abs() < 1e-12);
    }

    fn random_dists(n: usize, rng: &mut impl Rng) -> Vec<GaussianActionDistribution> {
        (0..n)
            .map(|_| GaussianActionDistribution {
                mean: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                std: std::array::from_fn(|_| rng.random_range(0.05..2.0)),
            })
            .collect()
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dists = random_dists(5, &mut rng);
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
        let a: JointVector = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let f = |w: &[f64]| compose(&dists, w).unwrap().log_prob(&a);
        let c = compose(&dists, &w).unwrap();
        let d_mean: JointVector = std::array::from_fn(|j| (a[j] - c.mean[j]) / c.std[j].powi(2));
        let d_std: JointVector =
            std::array::from_fn(|j| ((a[j] - c.mean[j]).powi(2) / c.std[j].powi(2) - 1.0) / c.std[j]);
        let g = compose_weight_gradient(&dists, &w, &d_mean, &d_std);
        for i in 0..5 {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (f(&hi) - f(&lo)) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{i}: {} vs {fd}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn compose_is_permutation_equivariant(seed in 0u64..1000, shift in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_dists(5, &mut rng);
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut dp = d.clone();
            let mut wp = w.clone();
            dp.rotate_left(shift);
            wp.rotate_left(shift);
            let a = compose(&d, &w).unwrap();
            let b = compose(&dp, &wp).unwrap();
            for j in 0..NUM_JOINTS {
                prop_assert!((a.mean[j] - b.mean[j]).abs() < 1e-12);
                prop_assert!((a.std[j] - b.std[j]).abs() < 1e-12);
            }
        }

        #[test]
        fn unit_weights_shrink_std(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_dists(5, &mut rng);
            let c = compose(&d, &[1.0; 5]).unwrap();
            for j in 0..NUM_JOINTS {
                prop_assert!(d.iter().all(|e| c.std[j] < e.std[j]));
            }
        }
    }
}
