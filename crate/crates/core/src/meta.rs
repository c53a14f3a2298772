//! Meta-controller and the interactive learning loops.
//!
//! A rollout is a small state machine over [`Mode`]. Each algorithm differs
//! only in how a single step picks who acts and what the next mode is:
//!
//! | algorithm   | enters supervisor mode | leaves supervisor mode        |
//! |-------------|------------------------|-------------------------------|
//! | DAgger      | always labels          | never executes supervisor     |
//! | SafeDAgger  | `f(s) >= 0.5`          | `f(s) < 0.5`                  |
//! | LazyDAgger  | `f(s) >= 0.5`          | `‖a_R − a_H‖ < τ_auto`        |
//!
//! LazyDAgger additionally executes a noisy copy of the supervisor action
//! while storing the clean one.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{ActionBounds, EnvAction, EnvState, Environment};
use crate::metrics::EpisodeLog;
use crate::policy::{train_bc, Dataset, LabeledPair, Provenance, RobotPolicy, TrainConfig};
use crate::rng::{derive_seed, rng_for, stream, Rng};
use crate::safety::{discrepancy, train_classifier, AbsoluteThresholds, DiscrepancyClassifier};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Autonomous,
    Supervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorKind {
    Analytic,
    RemoteHuman,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SupervisorError {
    #[error("no supervisor action within {seconds:.1} s (episode {episode}, t {t})")]
    Timeout { seconds: f64, episode: usize, t: usize },
    #[error("supervisor disconnected: {0}")]
    Disconnected(String),
    #[error("supervisor protocol error: {0}")]
    Protocol(String),
}

impl SupervisorError {
    /// Whether the run can be resumed from its last epoch checkpoint.
    pub fn is_resumable(&self) -> bool {
        matches!(self, SupervisorError::Timeout { .. } | SupervisorError::Disconnected(_))
    }
}

/// What the meta-controller knows when it asks for help.
#[derive(Debug, Clone, Copy)]
pub struct SupervisorQuery<'a> {
    pub episode: usize,
    pub t: usize,
    pub state: &'a EnvState,
    pub robot_action: &'a EnvAction,
}

/// Source of supervisor actions `π_H`.
pub trait Supervisor {
    fn kind(&self) -> SupervisorKind;

    /// Blocks until the supervisor answers. The rollout is paused meanwhile.
    fn query(&mut self, query: &SupervisorQuery<'_>) -> Result<EnvAction, SupervisorError>;

    /// Called once per executed step with the step record and the state the
    /// step led to.
    fn observe(&mut self, _record: &StepRecord, _next_state: &EnvState) {}

    fn episode_start(&mut self, _episode: usize, _state: &EnvState) {}
}

/// In-process supervisor backed by the environment's analytic controller.
pub struct AnalyticSupervisor<'e> {
    env: &'e dyn Environment,
}

impl<'e> AnalyticSupervisor<'e> {
    pub fn new(env: &'e dyn Environment) -> Self {
        AnalyticSupervisor { env }
    }
}

impl Supervisor for AnalyticSupervisor<'_> {
    fn kind(&self) -> SupervisorKind {
        SupervisorKind::Analytic
    }

    fn query(&mut self, query: &SupervisorQuery<'_>) -> Result<EnvAction, SupervisorError> {
        Ok(self.env.supervisor_action(query.state))
    }
}

/// Rollout parameters shared by the interactive algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazyConfig {
    pub epochs: usize,
    /// Environment steps per epoch, across episode resets.
    pub steps_per_epoch: usize,
    pub thresholds: AbsoluteThresholds,
    /// Variance of the isotropic Gaussian added to executed supervisor
    /// actions, in action units squared.
    pub sigma2: f64,
    pub update_policy: bool,
    pub inject_noise: bool,
}

impl LazyConfig {
    /// Frozen-policy, noise-free variant used at execution time.
    pub fn execution(epochs: usize, steps_per_epoch: usize, thresholds: AbsoluteThresholds) -> Self {
        LazyConfig {
            epochs,
            steps_per_epoch,
            thresholds,
            sigma2: 0.0,
            update_policy: false,
            inject_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return Err(Error::InvalidArgument("sigma2 must be finite and >= 0".into()));
        }
        let t = self.thresholds;
        if !(t.tau_auto >= 0.0 && t.tau_auto <= t.tau_sup) {
            return Err(Error::InvalidArgument(
                "thresholds need 0 <= tau_auto <= tau_sup".into(),
            ));
        }
        Ok(())
    }

    pub fn is_execution(&self) -> bool {
        !self.update_policy && !self.inject_noise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub policy: TrainConfig,
    pub classifier: TrainConfig,
}

/// One executed timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step index within the episode.
    pub t: usize,
    /// Who acted at this step.
    pub mode: Mode,
    /// Classifier output, when the classifier was consulted.
    pub f_prediction: Option<f64>,
    pub robot_action: EnvAction,
    pub executed_action: EnvAction,
    pub supervisor_action: Option<EnvAction>,
    pub discrepancy: Option<f64>,
}

/// Gating rule of SafeDAgger: hand over unless `f(s) < 0.5`.
pub fn safedagger_select(f_prediction: f64) -> Mode {
    if f_prediction < 0.5 {
        Mode::Autonomous
    } else {
        Mode::Supervisor
    }
}

/// `a + ε`, `ε ~ N(0, σ² I)`, before clipping.
pub fn perturb(action: &EnvAction, sigma2: f64, rng: &mut Rng) -> EnvAction {
    if sigma2 == 0.0 {
        return action.clone();
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("sigma2 is finite and non-negative");
    EnvAction(action.0.iter().map(|a| a + normal.sample(rng)).collect())
}

/// Noisy supervisor action, clipped back into the action box. `σ² = 0`
/// returns the input unchanged.
pub fn inject_noise(action: &EnvAction, sigma2: f64, bounds: &ActionBounds, rng: &mut Rng) -> EnvAction {
    if sigma2 == 0.0 {
        return action.clone();
    }
    bounds.clip(&perturb(action, sigma2, rng))
}

/// Everything a single gated step reads but does not change.
pub struct StepContext<'a> {
    pub policy: &'a RobotPolicy,
    pub classifier: Option<&'a DiscrepancyClassifier>,
    pub bounds: &'a ActionBounds,
    pub config: &'a LazyConfig,
    pub epoch: usize,
    pub episode: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub executed: EnvAction,
    pub next_mode: Mode,
    pub record: StepRecord,
    pub new_pair: Option<LabeledPair>,
}

impl StepContext<'_> {
    fn classifier(&self) -> Result<&DiscrepancyClassifier> {
        self.classifier
            .ok_or_else(|| Error::InvalidArgument("gated algorithms need a classifier".into()))
    }

    fn ask(
        &self,
        supervisor: &mut dyn Supervisor,
        state: &EnvState,
        robot_action: &EnvAction,
        t: usize,
    ) -> Result<(EnvAction, f64, LabeledPair)> {
        let a_h = supervisor.query(&SupervisorQuery {
            episode: self.episode,
            t,
            state,
            robot_action,
        })?;
        let a_h = self.bounds.clip(&a_h);
        let d = discrepancy(robot_action, &a_h)?;
        let pair = LabeledPair {
            state: state.clone(),
            supervisor_action: a_h.clone(),
            provenance: Provenance::Online { epoch: self.epoch },
        };
        Ok((a_h, d, pair))
    }
}

/// One step of the LazyDAgger meta-controller.
///
/// In supervisor mode the classifier is not consulted; control returns to
/// the robot only once the robot's own proposal is within `τ_auto` of the
/// supervisor's action. The clean supervisor action is stored, the noisy one
/// executed.
pub fn lazydagger_step(
    ctx: &StepContext<'_>,
    mode: Mode,
    state: &EnvState,
    t: usize,
    supervisor: &mut dyn Supervisor,
    rng: &mut Rng,
) -> Result<StepResult> {
    let a_robot = ctx.policy.forward(state)?;
    let f = match mode {
        Mode::Supervisor => None,
        Mode::Autonomous => Some(ctx.classifier()?.predict(state)?),
    };
    let hand_over = mode == Mode::Supervisor || f.is_some_and(|f| f >= 0.5);
    if !hand_over {
        return Ok(StepResult {
            executed: a_robot.clone(),
            next_mode: Mode::Autonomous,
            record: StepRecord {
                t,
                mode: Mode::Autonomous,
                f_prediction: f,
                robot_action: a_robot.clone(),
                executed_action: a_robot,
                supervisor_action: None,
                discrepancy: None,
            },
            new_pair: None,
        });
    }
    let (a_h, d, pair) = ctx.ask(supervisor, state, &a_robot, t)?;
    let executed = if ctx.config.inject_noise {
        inject_noise(&a_h, ctx.config.sigma2, ctx.bounds, rng)
    } else {
        a_h.clone()
    };
    let next_mode = if d < ctx.config.thresholds.tau_auto {
        Mode::Autonomous
    } else {
        Mode::Supervisor
    };
    Ok(StepResult {
        executed: executed.clone(),
        next_mode,
        record: StepRecord {
            t,
            mode: Mode::Supervisor,
            f_prediction: f,
            robot_action: a_robot,
            executed_action: executed,
            supervisor_action: Some(a_h),
            discrepancy: Some(d),
        },
        new_pair: Some(pair),
    })
}

/// One step of SafeDAgger: the classifier decides every step, in both
/// directions, and the supervisor action is executed without noise.
pub fn safedagger_step(
    ctx: &StepContext<'_>,
    state: &EnvState,
    t: usize,
    supervisor: &mut dyn Supervisor,
) -> Result<StepResult> {
    let a_robot = ctx.policy.forward(state)?;
    let f = ctx.classifier()?.predict(state)?;
    match safedagger_select(f) {
        Mode::Autonomous => Ok(StepResult {
            executed: a_robot.clone(),
            next_mode: Mode::Autonomous,
            record: StepRecord {
                t,
                mode: Mode::Autonomous,
                f_prediction: Some(f),
                robot_action: a_robot.clone(),
                executed_action: a_robot,
                supervisor_action: None,
                discrepancy: None,
            },
            new_pair: None,
        }),
        Mode::Supervisor => {
            let (a_h, d, pair) = ctx.ask(supervisor, state, &a_robot, t)?;
            Ok(StepResult {
                executed: a_h.clone(),
                next_mode: Mode::Supervisor,
                record: StepRecord {
                    t,
                    mode: Mode::Supervisor,
                    f_prediction: Some(f),
                    robot_action: a_robot,
                    executed_action: a_h.clone(),
                    supervisor_action: Some(a_h),
                    discrepancy: Some(d),
                },
                new_pair: Some(pair),
            })
        }
    }
}

/// One step of DAgger: the robot always acts and the supervisor labels the
/// state. The supervisor counts as engaged for the whole episode.
pub fn dagger_step(
    ctx: &StepContext<'_>,
    state: &EnvState,
    t: usize,
    supervisor: &mut dyn Supervisor,
) -> Result<StepResult> {
    let a_robot = ctx.policy.forward(state)?;
    let (a_h, d, pair) = ctx.ask(supervisor, state, &a_robot, t)?;
    Ok(StepResult {
        executed: a_robot.clone(),
        next_mode: Mode::Supervisor,
        record: StepRecord {
            t,
            mode: Mode::Supervisor,
            f_prediction: None,
            robot_action: a_robot.clone(),
            executed_action: a_robot,
            supervisor_action: Some(a_h),
            discrepancy: Some(d),
        },
        new_pair: Some(pair),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dagger,
    SafeDagger,
    LazyDagger,
}

/// Mutable learner state carried across epochs; enough to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub policy: RobotPolicy,
    pub classifier: Option<DiscrepancyClassifier>,
    /// Aggregated dataset `D`; grows with every supervisor step.
    pub dataset: Dataset,
    /// Classifier-only split, frozen after the initial partition.
    pub safe_dataset: Dataset,
    pub next_epoch: usize,
    pub episodes_started: usize,
}

impl RunState {
    pub fn new(policy: RobotPolicy, classifier: Option<DiscrepancyClassifier>, dataset: Dataset, safe_dataset: Dataset) -> Self {
        RunState {
            policy,
            classifier,
            dataset,
            safe_dataset,
            next_epoch: 0,
            episodes_started: 0,
        }
    }
}

pub struct EpochReport<'a> {
    pub epoch: usize,
    pub state: &'a RunState,
    pub logs: &'a [EpisodeLog],
}

/// Hook invoked after every epoch's refit; an error stops the run.
pub trait EpochObserver {
    fn on_epoch_end(&mut self, report: &EpochReport<'_>) -> std::result::Result<(), String>;
}

pub struct NoObserver;

impl EpochObserver for NoObserver {
    fn on_epoch_end(&mut self, _report: &EpochReport<'_>) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Adapts a closure into an [`EpochObserver`].
pub struct FnObserver<F>(pub F);

impl<F> EpochObserver for FnObserver<F>
where
    F: FnMut(&EpochReport<'_>) -> std::result::Result<(), String>,
{
    fn on_epoch_end(&mut self, report: &EpochReport<'_>) -> std::result::Result<(), String> {
        (self.0)(report)
    }
}

/// Runs epochs `state.next_epoch..config.epochs` of an interactive
/// algorithm, mutating `state` in place and returning the episode logs of
/// the epochs it ran.
#[allow(clippy::too_many_arguments)]
pub fn run_interactive(
    algorithm: Algorithm,
    env: &dyn Environment,
    state: &mut RunState,
    supervisor: &mut dyn Supervisor,
    config: &LazyConfig,
    train: &TrainSettings,
    seed: u64,
    observer: &mut dyn EpochObserver,
) -> Result<Vec<EpisodeLog>> {
    config.validate()?;
    if algorithm != Algorithm::Dagger && state.classifier.is_none() {
        return Err(Error::InvalidArgument(format!("{algorithm:?} needs a classifier")));
    }
    let bounds = env.spec().bounds.clone();
    let mut all_logs = Vec::new();
    while state.next_epoch < config.epochs {
        let epoch = state.next_epoch;
        let mut noise_rng = rng_for(seed, &[stream::NOISE, epoch as u64]);
        let mut logs = Vec::new();
        let mut steps = 0;
        while steps < config.steps_per_epoch {
            let episode = state.episodes_started;
            state.episodes_started += 1;
            let reset_seed = derive_seed(seed, &[stream::ROLLOUT, epoch as u64, logs.len() as u64]);
            let mut s = env.reset(reset_seed);
            supervisor.episode_start(episode, &s);
            let mut log = EpisodeLog::new(episode, epoch, reset_seed);
            let mut mode = Mode::Autonomous;
            let mut t = 0;
            loop {
                let ctx = StepContext {
                    policy: &state.policy,
                    classifier: state.classifier.as_ref(),
                    bounds: &bounds,
                    config,
                    epoch,
                    episode,
                };
                let step = match algorithm {
                    Algorithm::LazyDagger => lazydagger_step(&ctx, mode, &s, t, supervisor, &mut noise_rng)?,
                    Algorithm::SafeDagger => safedagger_step(&ctx, &s, t, supervisor)?,
                    Algorithm::Dagger => dagger_step(&ctx, &s, t, supervisor)?,
                };
                if let Some(pair) = step.new_pair {
                    state.dataset.push(pair);
                }
                let out = env.step(&s, &step.executed, t)?;
                supervisor.observe(&step.record, &out.next_state);
                log.push(step.record, out.reward);
                s = out.next_state;
                mode = step.next_mode;
                t += 1;
                steps += 1;
                if out.done {
                    log.finish(out.success, out.crashed, false);
                    break;
                }
                if steps >= config.steps_per_epoch {
                    log.finish(false, false, true);
                    break;
                }
            }
            logs.push(log);
        }
        if config.update_policy {
            refit(algorithm, state, train, seed, epoch, config.thresholds.tau_sup)?;
        }
        state.next_epoch = epoch + 1;
        observer
            .on_epoch_end(&EpochReport {
                epoch,
                state,
                logs: &logs,
            })
            .map_err(Error::Observer)?;
        all_logs.extend(logs);
    }
    Ok(all_logs)
}

/// Warm-started refit of the policy on `D` and of the classifier on
/// `D ∪ D_safe`, labels recomputed with the refitted policy.
fn refit(algorithm: Algorithm, state: &mut RunState, train: &TrainSettings, seed: u64, epoch: usize, tau_sup: f64) -> Result<()> {
    let ps = derive_seed(seed, &[stream::REFIT_POLICY, epoch as u64]);
    state.policy = train_bc(&state.policy, &state.dataset, &train.policy, ps)?.model;
    if algorithm == Algorithm::Dagger {
        return Ok(());
    }
    if let Some(classifier) = state.classifier.as_ref() {
        let union = state.dataset.union(&state.safe_dataset);
        let cs = derive_seed(seed, &[stream::REFIT_CLASSIFIER, epoch as u64]);
        let trained = train_classifier(classifier, &union, &state.policy, tau_sup, &train.classifier, cs)?;
        state.classifier = Some(trained.outcome.model);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run_lazydagger(
    env: &dyn Environment,
    state: &mut RunState,
    supervisor: &mut dyn Supervisor,
    config: &LazyConfig,
    train: &TrainSettings,
    seed: u64,
    observer: &mut dyn EpochObserver,
) -> Result<Vec<EpisodeLog>> {
    run_interactive(Algorithm::LazyDagger, env, state, supervisor, config, train, seed, observer)
}

pub fn run_safedagger(
    env: &dyn Environment,
    state: &mut RunState,
    supervisor: &mut dyn Supervisor,
    config: &LazyConfig,
    train: &TrainSettings,
    seed: u64,
    observer: &mut dyn EpochObserver,
) -> Result<Vec<EpisodeLog>> {
    run_interactive(Algorithm::SafeDagger, env, state, supervisor, config, train, seed, observer)
}

pub fn run_dagger(
    env: &dyn Environment,
    state: &mut RunState,
    supervisor: &mut dyn Supervisor,
    config: &LazyConfig,
    train: &TrainSettings,
    seed: u64,
    observer: &mut dyn EpochObserver,
) -> Result<Vec<EpisodeLog>> {
    run_interactive(Algorithm::Dagger, env, state, supervisor, config, train, seed, observer)
}

/// Offline behaviour cloning for `epochs` epochs; no rollouts, no
/// interventions.
pub fn run_bc(policy: &RobotPolicy, dataset: &Dataset, config: &TrainConfig, epochs: usize, seed: u64) -> Result<RobotPolicy> {
    let mut model = policy.clone();
    for e in 0..epochs {
        model = train_bc(&model, dataset, config, derive_seed(seed, &[stream::REFIT_POLICY, e as u64]))?.model;
    }
    Ok(model)
}

/// Rolls out the supervisor from seeded starts until `n_pairs` labelled
/// states have been collected.
pub fn collect_offline(env: &dyn Environment, supervisor: &mut dyn Supervisor, n_pairs: usize, seed: u64) -> Result<Dataset> {
    let mut data = Dataset::new();
    let mut episode = 0usize;
    while data.len() < n_pairs {
        let mut s = env.reset(derive_seed(seed, &[stream::OFFLINE, episode as u64]));
        for t in 0..env.spec().horizon {
            if data.len() >= n_pairs {
                break;
            }
            let a = supervisor.query(&SupervisorQuery {
                episode,
                t,
                state: &s,
                robot_action: &EnvAction::zeros(env.spec().action_dim),
            })?;
            data.push(LabeledPair {
                state: s.clone(),
                supervisor_action: a.clone(),
                provenance: Provenance::Offline,
            });
            let out = env.step(&s, &a, t)?;
            s = out.next_state;
            if out.done {
                break;
            }
        }
        episode += 1;
    }
    Ok(data)
}

/// Outcome of one intervention-free test rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRollout {
    pub success: bool,
    pub crashed: bool,
    pub total_reward: f64,
    pub steps: usize,
}

/// Runs the policy alone for `n` episodes; interventions are not allowed.
pub fn test_rollouts(env: &dyn Environment, policy: &RobotPolicy, n: usize, seed: u64) -> Result<Vec<TestRollout>> {
    Ok(test_episodes(env, policy, n, seed, 0)?
        .iter()
        .map(|log| TestRollout {
            success: log.success,
            crashed: log.crashed,
            total_reward: log.total_reward,
            steps: log.records.len(),
        })
        .collect())
}

/// Like [`test_rollouts`] but keeps the full autonomous-only logs.
pub fn test_episodes(env: &dyn Environment, policy: &RobotPolicy, n: usize, seed: u64, epoch: usize) -> Result<Vec<EpisodeLog>> {
    (0..n)
        .map(|i| {
            let reset_seed = derive_seed(seed, &[stream::TEST, i as u64]);
            let mut s = env.reset(reset_seed);
            let mut log = EpisodeLog::new(i, epoch, reset_seed);
            for t in 0..env.spec().horizon {
                let a = policy.forward(&s)?;
                let out = env.step(&s, &a, t)?;
                log.push(
                    StepRecord {
                        t,
                        mode: Mode::Autonomous,
                        f_prediction: None,
                        robot_action: a.clone(),
                        executed_action: a,
                        supervisor_action: None,
                        discrepancy: None,
                    },
                    out.reward,
                );
                s = out.next_state;
                if out.done {
                    log.finish(out.success, out.crashed, false);
                    return Ok(log);
                }
            }
            unreachable!("environments report done at the horizon")
        })
        .collect()
}
