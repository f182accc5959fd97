//! CMA-ES over the switch criteria `(x1, x2)` with repair to the feasible
//! set `0 <= x1 < x2 <= 15`, and the outer loop that interleaves it with
//! gating training.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, CompositeSource, EpisodeConfig, EpisodeOptions, Task};
use crate::error::{Error, Result};
use crate::policy::CompositePolicy;
use crate::reward::{RewardEngine, SwitchCriteria, MAX_GOAL_DISTANCE};
use crate::rng::{RngStream, Stream};
use crate::sac::{sample_goal, GatingTrainer};
use crate::sim::{ResetMode, Simulator};

const DIM: usize = 2;
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    pub population: usize,
    pub sigma0: f64,
    pub initial_mean: [f64; 2],
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig {
            population: 50,
            sigma0: 1.0,
            initial_mean: [2.0, 5.0],
        }
    }
}

impl CmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("cma.population must be at least 2".into()));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::Config("cma.sigma0 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub candidate: SwitchCriteria,
    /// Sum of `-r_g` over the evaluated steps.
    pub cost: f64,
    pub steps: usize,
    pub valid: bool,
}

/// Clamp to `[0, 15]`, swap if out of order, and separate equal values.
pub fn repair(x: [f64; 2]) -> SwitchCriteria {
    let mut a = x[0].clamp(0.0, MAX_GOAL_DISTANCE);
    let mut b = x[1].clamp(0.0, MAX_GOAL_DISTANCE);
    if a >= b {
        std::mem::swap(&mut a, &mut b);
    }
    if a == b {
        if b + 0.01 <= MAX_GOAL_DISTANCE {
            b += 0.01;
        } else {
            a -= 0.01;
        }
    }
    SwitchCriteria { x1: a, x2: b }
}

/// Strategy parameters that depend only on dimension and population.
#[derive(Clone, Debug, PartialEq)]
struct Params {
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Params {
    fn new(lambda: usize) -> Self {
        let n = DIM as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Params {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c1,
            c_mu,
            chi_n,
        }
    }
}

type Mat2 = [[f64; 2]; 2];

/// Eigenvalues (floored) and column eigenvectors of a symmetric 2x2 matrix.
fn eigen_sym(c: &Mat2) -> ([f64; 2], Mat2) {
    let (a, b, d) = (c[0][0], c[0][1], c[1][1]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (s, co) = theta.sin_cos();
    ([l1.max(EIGEN_FLOOR), l2.max(EIGEN_FLOOR)], [[co, -s], [s, co]])
}

fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaState {
    pub mean: [f64; 2],
    pub sigma: f64,
    pub cov: Mat2,
    pub p_sigma: [f64; 2],
    pub p_c: [f64; 2],
    pub generation: usize,
    pub best: Option<(SwitchCriteria, f64)>,
    params: Params,
    eigvals: [f64; 2],
    eigvecs: Mat2,
    asked: Vec<SwitchCriteria>,
}

impl CmaState {
    pub fn new(config: &CmaConfig) -> Result<Self> {
        config.validate()?;
        Ok(CmaState {
            mean: config.initial_mean,
            sigma: config.sigma0,
            cov: [[1.0, 0.0], [0.0, 1.0]],
            p_sigma: [0.0; 2],
            p_c: [0.0; 2],
            generation: 0,
            best: None,
            params: Params::new(config.population),
            eigvals: [1.0, 1.0],
            eigvecs: [[1.0, 0.0], [0.0, 1.0]],
            asked: Vec::new(),
        })
    }

    pub fn population(&self) -> usize {
        self.params.lambda
    }

    /// Draws the population and repairs every sample into the feasible set.
    pub fn ask(&mut self, rng: &mut impl Rng) -> Vec<SwitchCriteria> {
        let d = [self.eigvals[0].sqrt(), self.eigvals[1].sqrt()];
        self.asked = (0..self.params.lambda)
            .map(|_| {
                let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let y = mat_vec(&self.eigvecs, [d[0] * z[0], d[1] * z[1]]);
                repair([self.mean[0] + self.sigma * y[0], self.mean[1] + self.sigma * y[1]])
            })
            .collect();
        self.asked.clone()
    }

    /// `C^{-1/2} v`.
    fn inv_sqrt_c(&self, v: [f64; 2]) -> [f64; 2] {
        let b = &self.eigvecs;
        let bt_v = [b[0][0] * v[0] + b[1][0] * v[1], b[0][1] * v[0] + b[1][1] * v[1]];
        mat_vec(b, [bt_v[0] / self.eigvals[0].sqrt(), bt_v[1] / self.eigvals[1].sqrt()])
    }

    /// Recombination weights by rank; tied costs inside the selected half
    /// share their weights equally.
    fn rank_weights(&self, costs: &[f64]) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..costs.len()).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        let mu = self.params.mu;
        let mut w = self.params.weights.clone();
        let mut start = 0;
        while start < mu {
            let mut end = start + 1;
            while end < mu && costs[order[end]] == costs[order[start]] {
                end += 1;
            }
            let avg = w[start..end].iter().sum::<f64>() / (end - start) as f64;
            w[start..end].iter_mut().for_each(|v| *v = avg);
            start = end;
        }
        order.into_iter().take(mu).zip(w).collect()
    }

    /// Standard rank-one / rank-μ update with cumulative step-size control,
    /// computed from the repaired candidates.
    pub fn tell(&mut self, evaluations: &[CandidateEvaluation]) -> Result<()> {
        if evaluations.len() != self.params.lambda {
            return Err(Error::EvaluationCount {
                expected: self.params.lambda,
                actual: evaluations.len(),
            });
        }
        if evaluations.iter().any(|e| !e.cost.is_finite()) {
            return Err(Error::NonFinite { field: "cost" });
        }
        let p = self.params.clone();
        let n = DIM as f64;
        let costs: Vec<f64> = evaluations.iter().map(|e| e.cost).collect();
        let selected = self.rank_weights(&costs);

        let old_mean = self.mean;
        let ys: Vec<([f64; 2], f64)> = selected
            .iter()
            .map(|&(i, w)| {
                let c = evaluations[i].candidate;
                (
                    [(c.x1 - old_mean[0]) / self.sigma, (c.x2 - old_mean[1]) / self.sigma],
                    w,
                )
            })
            .collect();
        let mut y_w = [0.0; 2];
        for (y, w) in &ys {
            y_w[0] += w * y[0];
            y_w[1] += w * y[1];
        }
        self.mean = [old_mean[0] + self.sigma * y_w[0], old_mean[1] + self.sigma * y_w[1]];

        let cs = (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let z = self.inv_sqrt_c(y_w);
        for k in 0..DIM {
            self.p_sigma[k] = (1.0 - p.c_sigma) * self.p_sigma[k] + cs * z[k];
        }
        let ps_norm = (self.p_sigma[0].powi(2) + self.p_sigma[1].powi(2)).sqrt();
        let g = (self.generation + 1) as i32;
        let h_sigma = ps_norm / (1.0 - (1.0 - p.c_sigma).powi(2 * g)).sqrt() < (1.4 + 2.0 / (n + 1.0)) * p.chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        let cc = (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt();
        for k in 0..DIM {
            self.p_c[k] = (1.0 - p.c_c) * self.p_c[k] + hs * cc * y_w[k];
        }
        let delta = (1.0 - hs) * p.c_c * (2.0 - p.c_c);
        let mut c = [[0.0; 2]; 2];
        for r in 0..DIM {
            for s in 0..DIM {
                let rank_mu: f64 = ys.iter().map(|(y, w)| w * y[r] * y[s]).sum();
                c[r][s] = (1.0 - p.c1 - p.c_mu) * self.cov[r][s]
                    + p.c1 * (self.p_c[r] * self.p_c[s] + delta * self.cov[r][s])
                    + p.c_mu * rank_mu;
            }
        }
        let sym = 0.5 * (c[0][1] + c[1][0]);
        c[0][1] = sym;
        c[1][0] = sym;
        let (vals, vecs) = eigen_sym(&c);
        // rebuild from floored spectrum so C stays positive definite
        for r in 0..DIM {
            for s in 0..DIM {
                c[r][s] = (0..DIM).map(|k| vals[k] * vecs[r][k] * vecs[s][k]).sum();
            }
        }
        c[1][0] = c[0][1];
        self.cov = c;
        self.eigvals = vals;
        self.eigvecs = vecs;
        self.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();

        let (best_i, best_c) = costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, c)| (i, *c))
            .expect("population is non-empty");
        if self.best.is_none_or(|(_, c)| best_c < c) {
            self.best = Some((evaluations[best_i].candidate, best_c));
        }
        self.generation += 1;
        Ok(())
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        self.eigvals
    }

    pub fn asked(&self) -> &[SwitchCriteria] {
        &self.asked
    }
}

/// How the outer loop trains and scores candidates.
pub trait CriteriaProblem {
    /// Advance the inner learner with the current best criteria.
    fn train(&mut self, criteria: SwitchCriteria, epochs: usize) -> Result<()>;

    fn evaluate(&mut self, candidates: &[SwitchCriteria], generation: usize) -> Result<Vec<CandidateEvaluation>>;
}

/// Pure cost function with no inner training.
pub struct CostFunction<F: FnMut(SwitchCriteria) -> f64>(pub F);

impl<F: FnMut(SwitchCriteria) -> f64> CriteriaProblem for CostFunction<F> {
    fn train(&mut self, _criteria: SwitchCriteria, _epochs: usize) -> Result<()> {
        Ok(())
    }

    fn evaluate(&mut self, candidates: &[SwitchCriteria], _generation: usize) -> Result<Vec<CandidateEvaluation>> {
        Ok(candidates
            .iter()
            .map(|c| CandidateEvaluation {
                candidate: *c,
                cost: (self.0)(*c),
                steps: 0,
                valid: true,
            })
            .collect())
    }
}

/// Episodes used to score every candidate of one generation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationPlan {
    pub episodes: Vec<(u64, crate::reward::Goal)>,
    pub steps: usize,
    pub reset: ResetMode,
    pub stochastic: bool,
}

impl EvaluationPlan {
    /// Shared seeds and goals for a generation.
    pub fn for_generation(seed: u64, generation: usize, episodes: usize, steps: usize) -> Self {
        let mut rng = RngStream::with_stream_id(
            seed ^ (generation as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            Stream::Goals as u64,
        );
        EvaluationPlan {
            episodes: (0..episodes)
                .map(|_| (rng.child_seed(), sample_goal(&mut rng)))
                .collect(),
            steps,
            reset: ResetMode::Nominal,
            stochastic: false,
        }
    }
}

/// Runs the plan's episodes with the composite policy under `candidate`;
/// cost is `Σ -r_g`.
pub fn evaluate_criteria(
    candidate: SwitchCriteria,
    policy: &CompositePolicy,
    sim: &Simulator,
    engine: &RewardEngine,
    plan: &EvaluationPlan,
) -> Result<CandidateEvaluation> {
    candidate.validate()?;
    if plan.episodes.is_empty() {
        return Err(Error::InvalidArgument("episode budget must be at least 1".into()));
    }
    let mut sim = sim.clone();
    let mut cost = 0.0;
    let mut steps = 0;
    let mut valid = true;
    for (seed, goal) in &plan.episodes {
        let cfg = EpisodeConfig {
            steps: plan.steps,
            reset: plan.reset,
            task: Task::Multi {
                goal: *goal,
                criteria: candidate,
            },
        };
        let mut source = CompositeSource {
            policy,
            stochastic: plan.stochastic,
            sim: &sim.clone(),
        };
        let traj = run_episode(&mut sim, engine, &mut source, &cfg, *seed, EpisodeOptions::default())?;
        valid &= traj.valid;
        cost -= traj.goal_reward_sum();
        steps += traj.len();
    }
    Ok(CandidateEvaluation {
        candidate,
        cost,
        steps,
        valid,
    })
}

/// Invalid candidates get the worst valid cost plus a margin ten times its
/// magnitude (at least 10).
pub fn penalize_invalid(evals: &mut [CandidateEvaluation]) {
    let worst = evals
        .iter()
        .filter(|e| e.valid)
        .map(|e| e.cost)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst = if worst.is_finite() { worst } else { 0.0 };
    let penalty = worst + 10.0 * worst.abs().max(1.0);
    for e in evals.iter_mut().filter(|e| !e.valid) {
        e.cost = penalty;
    }
}

/// Gating training plus episode-based scoring.
pub struct GatingProblem {
    pub trainer: GatingTrainer,
    pub episodes_per_candidate: usize,
    pub seed: u64,
    pub epoch_log: Vec<crate::sac::EpochStats>,
}

impl CriteriaProblem for GatingProblem {
    fn train(&mut self, criteria: SwitchCriteria, epochs: usize) -> Result<()> {
        let curve = self.trainer.train(criteria, epochs)?;
        self.epoch_log.extend(curve);
        Ok(())
    }

    fn evaluate(&mut self, candidates: &[SwitchCriteria], generation: usize) -> Result<Vec<CandidateEvaluation>> {
        let plan = EvaluationPlan::for_generation(
            self.seed,
            generation,
            self.episodes_per_candidate,
            self.trainer.sac.config.episode_steps,
        );
        let policy = self.trainer.policy().clone();
        let mut evals = candidates
            .iter()
            .map(|c| evaluate_criteria(*c, &policy, &self.trainer.sim, &self.trainer.engine, &plan))
            .collect::<Result<Vec<_>>>()?;
        penalize_invalid(&mut evals);
        Ok(evals)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub best_cost: f64,
    pub x1: f64,
    pub x2: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub generations: usize,
    pub epochs_per_generation: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            generations: 30,
            epochs_per_generation: 20,
        }
    }
}

/// Output of [`interleaved_optimize`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub history: Vec<HistoryRow>,
    pub state: CmaState,
    /// Every candidate evaluated, in order.
    pub evaluated: Vec<CandidateEvaluation>,
}

/// Alternates inner training (with the best-so-far criteria, initially the
/// warm start) and one CMA-ES generation.
pub fn interleaved_optimize(
    problem: &mut dyn CriteriaProblem,
    config: &CmaConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<OptimizationResult> {
    let mut state = CmaState::new(config)?;
    let mut rng = RngStream::new(seed, Stream::Cma);
    let mut history = Vec::with_capacity(schedule.generations);
    let mut evaluated = Vec::new();
    for gen in 0..schedule.generations {
        let current = state
            .best
            .map(|(c, _)| c)
            .unwrap_or_else(|| repair(config.initial_mean));
        if schedule.epochs_per_generation > 0 {
            problem.train(current, schedule.epochs_per_generation)?;
        }
        let candidates = state.ask(&mut rng);
        let evals = problem.evaluate(&candidates, gen)?;
        state.tell(&evals)?;
        evaluated.extend_from_slice(&evals);
        let (best, cost) = state.best.expect("tell records a best candidate");
        history.push(HistoryRow {
            generation: gen,
            best_cost: cost,
            x1: best.x1,
            x2: best.x2,
            mean_x1: state.mean[0],
            mean_x2: state.mean[1],
            sigma: state.sigma,
        });
    }
    Ok(OptimizationResult {
        history,
        state,
        evaluated,
    })
}

pub fn write_history(history: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("generation,best_cost,x1,x2,mean_x1,mean_x2,sigma\n");
    for h in history {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            h.generation, h.best_cost, h.x1, h.x2, h.mean_x1, h.mean_x2, h.sigma
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
