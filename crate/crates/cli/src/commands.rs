use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tracing::info;

use quadmix::bundle::{self, load_bundle, load_composite, load_estimator, save_estimator, save_expert, save_gating};
use quadmix::cmaes::{interleaved_optimize, write_history, EvaluationPlan, GatingProblem};
use quadmix::config::RunConfig;
use quadmix::episode::{
    run_episode, ActionSource, CompositeSource, ConstantSource, EpisodeConfig, EpisodeOptions, ManualSwitchSource,
    Task, Trajectory,
};
use quadmix::estimator::{collect_stand_trot, train_estimator, EstimatorNet};
use quadmix::export::export_trajectories;
use quadmix::gait::GaitType;
use quadmix::policy::{CompositePolicy, GatingNetwork};
use quadmix::reward::{Goal, SwitchCriteria};
use quadmix::rng::{RngStream, Stream};
use quadmix::sac::{sample_goal, train_expert, write_learning_curve, ExpertTask, GatingTrainer, SacConfig};
use quadmix::sim::ResetMode;
use quadmix::telemetry::{SessionPolicy, SteeringSession};

use crate::{BundleArg, Cli, Command, CriteriaArgs, DriveMode, EvalMode, TaskArg};

struct Context_ {
    config: RunConfig,
    out: PathBuf,
}

impl Context_ {
    fn bundle_dir(&self, arg: &BundleArg) -> PathBuf {
        arg.bundle.clone().unwrap_or_else(|| self.out.join("experts"))
    }

    fn criteria(&self, arg: &CriteriaArgs) -> Result<SwitchCriteria> {
        let found = self.out.join("criteria").join("best.toml");
        let base = if found.exists() {
            let text = std::fs::read_to_string(&found).with_context(|| format!("reading {}", found.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", found.display()))?
        } else {
            self.config.criteria.initial
        };
        let c = SwitchCriteria::new(arg.x1.unwrap_or(base.x1), arg.x2.unwrap_or(base.x2))?;
        Ok(c)
    }

    fn path(&self, parts: &[&str]) -> Result<PathBuf> {
        let mut p = self.out.clone();
        for part in parts {
            p.push(part);
        }
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let ctx = Context_ {
        out: config.output_dir.clone(),
        config,
    };
    match cli.command {
        Command::TrainExpert { task, epochs, bundle } => train_expert_cmd(&ctx, task, epochs, &bundle),
        Command::TrainGating {
            epochs,
            bundle,
            criteria,
        } => train_gating_cmd(&ctx, epochs, &bundle, &criteria),
        Command::OptimizeCriteria {
            generations,
            epochs_per_generation,
            bundle,
        } => optimize_cmd(&ctx, generations, epochs_per_generation, &bundle),
        Command::TrainEstimator { episodes, epochs } => estimator_cmd(&ctx, episodes, epochs),
        Command::Evaluate {
            mode,
            episodes,
            bundle,
            criteria,
            estimator,
        } => evaluate_cmd(&ctx, mode, episodes, &bundle, &criteria, estimator.as_deref()),
        Command::Serve {
            port,
            mode,
            bundle,
            criteria,
            estimator,
            assets,
            log,
            stochastic,
        } => {
            let policy = drive_policy(&ctx, mode, &bundle, stochastic)?;
            let mut session = SteeringSession::new(
                ctx.config.simulator(),
                ctx.config.engine(),
                policy,
                ctx.criteria(&criteria)?,
                ctx.config.seed,
            )?;
            if let Some(p) = estimator {
                session = session.with_estimator(load_estimator(&p)?);
            }
            crate::serve::serve(session, port, assets, log)
        }
        Command::Export {
            trajectory,
            mode,
            episodes,
            goal,
            bundle,
            criteria,
            estimator,
        } => export_cmd(
            &ctx,
            &trajectory,
            mode,
            episodes,
            goal,
            &bundle,
            &criteria,
            estimator.as_deref(),
        ),
        Command::ShowConfig => {
            print!("{}", ctx.config.to_toml_string()?);
            Ok(())
        }
    }
}

fn gait_of(task: TaskArg) -> GaitType {
    match task {
        TaskArg::Recovery | TaskArg::Stand => GaitType::Recovery,
        TaskArg::Trot => GaitType::Trot,
        TaskArg::Pace => GaitType::Pace,
        TaskArg::Bound => GaitType::Bound,
        TaskArg::Gallop => GaitType::Gallop,
    }
}

fn train_expert_cmd(ctx: &Context_, task: TaskArg, epochs: Option<usize>, bundle: &BundleArg) -> Result<()> {
    let cfg = &ctx.config;
    let gait = gait_of(task);
    let expert_task = if task == TaskArg::Stand {
        ExpertTask::stand_probe()
    } else {
        ExpertTask::standard(gait)
    };
    let sac = SacConfig {
        gamma: SacConfig::gamma_for(gait),
        ..cfg.sac.clone()
    };
    let epochs = epochs.unwrap_or(cfg.training.expert_epochs);
    let name = format!("{task:?}").to_lowercase();
    info!(task = %name, epochs, seed = cfg.seed, "training expert");
    let sim = cfg.simulator();
    let out = train_expert(&sim, &cfg.engine(), &expert_task, &sac, epochs, cfg.seed)?;
    for s in &out.curve {
        info!(
            epoch = s.epoch,
            mean_step_reward = s.mean_step_reward,
            alpha = s.alpha,
            "epoch done"
        );
    }
    write_learning_curve(&out.curve, ctx.path(&["curves", &format!("expert_{name}.csv")])?)?;
    if task == TaskArg::Stand {
        let path = ctx.path(&["probe", "stand.ckpt"])?;
        out.actor.net.save(&path)?;
        println!("{}", path.display());
    } else {
        let dir = ctx.bundle_dir(bundle);
        save_expert(&dir, gait, &out.actor, &cfg.gaits)?;
        println!("{}", dir.join(bundle::checkpoint_name(gait)).display());
    }
    Ok(())
}

fn load_experts(ctx: &Context_, bundle: &BundleArg) -> Result<quadmix::policy::ExpertSet> {
    let dir = ctx.bundle_dir(bundle);
    load_bundle(&dir, None).with_context(|| format!("loading experts from {} (run train-expert first)", dir.display()))
}

fn train_gating_cmd(ctx: &Context_, epochs: Option<usize>, bundle: &BundleArg, criteria: &CriteriaArgs) -> Result<()> {
    let cfg = &ctx.config;
    let experts = load_experts(ctx, bundle)?;
    let criteria = ctx.criteria(criteria)?;
    let epochs = epochs.unwrap_or(cfg.training.gating_epochs);
    info!(epochs, x1 = criteria.x1, x2 = criteria.x2, "training gating network");
    let mut trainer = GatingTrainer::new(&cfg.simulator(), &cfg.engine(), experts, &cfg.sac, cfg.seed)?;
    let curve = trainer.train(criteria, epochs)?;
    write_learning_curve(&curve, ctx.path(&["curves", "gating.csv"])?)?;
    let dir = ctx.bundle_dir(bundle);
    save_gating(&dir, &trainer.policy().gating)?;
    println!("{}", dir.join(bundle::GATING_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct BestCriteria {
    x1: f64,
    x2: f64,
    cost: f64,
    generations: usize,
}

fn optimize_cmd(
    ctx: &Context_,
    generations: Option<usize>,
    epochs_per_generation: Option<usize>,
    bundle: &BundleArg,
) -> Result<()> {
    let cfg = &ctx.config;
    let experts = load_experts(ctx, bundle)?;
    let mut schedule = cfg.criteria.schedule.clone();
    if let Some(g) = generations {
        schedule.generations = g;
    }
    if let Some(e) = epochs_per_generation {
        schedule.epochs_per_generation = e;
    }
    info!(
        generations = schedule.generations,
        epochs = schedule.epochs_per_generation,
        "optimizing switch criteria"
    );
    let trainer = GatingTrainer::new(&cfg.simulator(), &cfg.engine(), experts, &cfg.sac, cfg.seed)?;
    let mut problem = GatingProblem {
        trainer,
        episodes_per_candidate: cfg.criteria.episodes_per_candidate,
        seed: cfg.seed,
        epoch_log: Vec::new(),
    };
    let result = interleaved_optimize(&mut problem, &cfg.criteria.cma, &schedule, cfg.seed)?;
    for row in &result.history {
        info!(
            generation = row.generation,
            best_cost = row.best_cost,
            x1 = row.x1,
            x2 = row.x2,
            "generation done"
        );
    }
    write_history(&result.history, ctx.path(&["criteria", "history.csv"])?)?;
    write_learning_curve(&problem.epoch_log, ctx.path(&["criteria", "gating_curve.csv"])?)?;
    let best = result.state.best.map(|(c, cost)| BestCriteria {
        x1: c.x1,
        x2: c.x2,
        cost,
        generations: schedule.generations,
    });
    if let Some(best) = &best {
        let path = ctx.path(&["criteria", "best.toml"])?;
        std::fs::write(&path, toml::to_string(best)?).with_context(|| format!("writing {}", path.display()))?;
        println!("x1 = {:?}, x2 = {:?}", best.x1, best.x2);
    }
    save_gating(ctx.bundle_dir(bundle), &problem.trainer.policy().gating)?;
    Ok(())
}

#[derive(Serialize)]
struct EstimatorSummary {
    pairs: usize,
    validation_per_axis: [f64; 3],
    final_validation_mse: Option<f64>,
    validation_mse: Vec<f64>,
    train_mse: Vec<f64>,
}

fn estimator_cmd(ctx: &Context_, episodes: Option<usize>, epochs: Option<usize>) -> Result<()> {
    let cfg = &ctx.config;
    let mut settings = cfg.estimator.clone();
    if let Some(e) = episodes {
        settings.episodes = e;
    }
    if let Some(e) = epochs {
        settings.epochs = e;
    }
    let mut sim = cfg.simulator();
    let data = collect_stand_trot(&mut sim, &cfg.engine(), settings.episodes, cfg.seed)?;
    info!(pairs = data.len(), "collected estimator data");
    data.write_csv(ctx.path(&["estimator", "dataset.csv"])?)?;
    let (net, report) = train_estimator(&data, &settings.trainer_config(), cfg.seed)?;
    save_estimator(ctx.path(&["estimator", bundle::ESTIMATOR_FILE])?, &net)?;
    write_json(
        &ctx.path(&["estimator", "report.json"])?,
        &EstimatorSummary {
            pairs: data.len(),
            validation_per_axis: report.validation_per_axis,
            final_validation_mse: report.validation_mse.last().copied(),
            validation_mse: report.validation_mse.clone(),
            train_mse: report.train_mse.clone(),
        },
    )?;
    println!("per-axis validation mse {:?}", report.validation_per_axis);
    Ok(())
}

/// The composite policy for `mode`. Manual switching only consults the
/// experts, so a missing gating checkpoint is replaced by a fresh one.
fn composite_for(ctx: &Context_, bundle: &BundleArg, manual: bool) -> Result<CompositePolicy> {
    let dir = ctx.bundle_dir(bundle);
    if manual {
        let experts = load_experts(ctx, bundle)?;
        let gating = match bundle::load_gating(&dir) {
            Ok(g) => g,
            Err(_) => GatingNetwork::new(
                &ctx.config.sac.actor_hidden,
                &mut RngStream::new(ctx.config.seed, Stream::Init),
            ),
        };
        Ok(CompositePolicy { experts, gating })
    } else {
        load_composite(&dir).with_context(|| format!("loading composite policy from {}", dir.display()))
    }
}

fn drive_policy(ctx: &Context_, mode: DriveMode, bundle: &BundleArg, stochastic: bool) -> Result<SessionPolicy> {
    Ok(match mode {
        DriveMode::Composite => SessionPolicy::Composite {
            policy: composite_for(ctx, bundle, false)?,
            stochastic,
        },
        DriveMode::ManualSwitch => SessionPolicy::ManualSwitch(composite_for(ctx, bundle, true)?),
        DriveMode::Hold => {
            let sim = ctx.config.simulator();
            SessionPolicy::Hold(sim.config.nominal_hold_action(&sim.gains))
        }
    })
}

fn run_goal_episodes(
    ctx: &Context_,
    policy: &SessionPolicy,
    criteria: SwitchCriteria,
    goals: &[(u64, Goal)],
    estimator: Option<&EstimatorNet>,
) -> Result<Vec<Trajectory>> {
    let cfg = &ctx.config;
    let mut sim = cfg.simulator();
    let limits_sim = sim.clone();
    let engine = cfg.engine();
    let mut out = Vec::with_capacity(goals.len());
    for (seed, goal) in goals {
        let ep = EpisodeConfig {
            steps: cfg.sac.episode_steps,
            ..EpisodeConfig::new(Task::Multi { goal: *goal, criteria }, ResetMode::Nominal)
        };
        let mut source: Box<dyn ActionSource + '_> = match policy {
            SessionPolicy::Composite { policy, stochastic } => Box::new(CompositeSource {
                policy,
                stochastic: *stochastic,
                sim: &limits_sim,
            }),
            SessionPolicy::ManualSwitch(policy) => Box::new(ManualSwitchSource {
                policy,
                sim: &limits_sim,
            }),
            SessionPolicy::Hold(action) => Box::new(ConstantSource { action: *action }),
        };
        let options = EpisodeOptions { estimator };
        out.push(run_episode(&mut sim, &engine, source.as_mut(), &ep, *seed, options)?);
    }
    Ok(out)
}

fn episode_goals(ctx: &Context_, episodes: usize, fixed: Option<Goal>) -> Vec<(u64, Goal)> {
    let mut rng = RngStream::new(ctx.config.seed, Stream::Goals);
    (0..episodes)
        .map(|_| {
            let seed = rng.child_seed();
            let goal = sample_goal(&mut rng);
            (seed, fixed.unwrap_or(goal))
        })
        .collect()
}

#[derive(Serialize)]
struct EpisodeSummary {
    seed: u64,
    goal: [f64; 2],
    steps: usize,
    valid: bool,
    goal_reward_sum: f64,
    mean_reward: f64,
    final_distance: f64,
    /// Steps at which the dominant expert changed.
    switches: usize,
}

#[derive(Serialize)]
struct EvaluationSummary {
    mode: String,
    x1: f64,
    x2: f64,
    mean_goal_reward_sum: f64,
    invalid_episodes: usize,
    episodes: Vec<EpisodeSummary>,
}

fn dominant(w: &[f64]) -> usize {
    w.iter().enumerate().fold(0, |b, (i, x)| if *x > w[b] { i } else { b })
}

fn evaluate_cmd(
    ctx: &Context_,
    mode: EvalMode,
    episodes: usize,
    bundle: &BundleArg,
    criteria: &CriteriaArgs,
    estimator: Option<&Path>,
) -> Result<()> {
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let criteria = ctx.criteria(criteria)?;
    let (policy, name) = match mode {
        EvalMode::Composite => (drive_policy(ctx, DriveMode::Composite, bundle, false)?, "composite"),
        EvalMode::ManualSwitch => (
            drive_policy(ctx, DriveMode::ManualSwitch, bundle, false)?,
            "manual_switch",
        ),
    };
    let estimator = estimator.map(load_estimator).transpose()?;
    let plan = EvaluationPlan::for_generation(ctx.config.seed, 0, episodes, ctx.config.sac.episode_steps);
    let trajs = run_goal_episodes(ctx, &policy, criteria, &plan.episodes, estimator.as_ref())?;
    let mut summaries = Vec::new();
    for ((seed, goal), t) in plan.episodes.iter().zip(&trajs) {
        let switches = t
            .steps
            .windows(2)
            .filter(|w| dominant(&w[0].expert_weights) != dominant(&w[1].expert_weights))
            .count();
        let last = t.steps.last().map(|s| &s.state).unwrap_or(&t.initial_state);
        summaries.push(EpisodeSummary {
            seed: *seed,
            goal: [goal.x, goal.y],
            steps: t.len(),
            valid: t.valid,
            goal_reward_sum: t.goal_reward_sum(),
            mean_reward: t.mean_reward(),
            final_distance: goal.distance(last),
            switches,
        });
    }
    let summary = EvaluationSummary {
        mode: name.into(),
        x1: criteria.x1,
        x2: criteria.x2,
        mean_goal_reward_sum: summaries.iter().map(|s| s.goal_reward_sum).sum::<f64>() / episodes as f64,
        invalid_episodes: summaries.iter().filter(|s| !s.valid).count(),
        episodes: summaries,
    };
    export_trajectories(&trajs, ctx.path(&["eval", &format!("{name}.jsonl")])?)?;
    write_json(&ctx.path(&["eval", &format!("{name}_summary.json")])?, &summary)?;
    println!("{name}: mean goal reward sum {:?}", summary.mean_goal_reward_sum);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn export_cmd(
    ctx: &Context_,
    path: &Path,
    mode: DriveMode,
    episodes: usize,
    goal: Option<[f64; 2]>,
    bundle: &BundleArg,
    criteria: &CriteriaArgs,
    estimator: Option<&Path>,
) -> Result<()> {
    let criteria = ctx.criteria(criteria)?;
    let policy = drive_policy(ctx, mode, bundle, false)?;
    let estimator = estimator.map(load_estimator).transpose()?;
    let goals = episode_goals(ctx, episodes, goal.map(|[x, y]| Goal::at(x, y)));
    let trajs = run_goal_episodes(ctx, &policy, criteria, &goals, estimator.as_ref())?;
    let lines = export_trajectories(&trajs, path)?;
    println!("{lines} records -> {}", path.display());
    Ok(())
}
