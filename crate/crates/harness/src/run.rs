//! The per-seed pipeline and the multi-seed driver.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use lazydagger_core::checkpoint::{self, Checkpoint};
use lazydagger_core::env::Environment;
use lazydagger_core::meta::{
    collect_offline, run_interactive, test_episodes, AnalyticSupervisor, EpochReport, FnObserver, LazyConfig, Mode,
    RunState, Supervisor,
};
use lazydagger_core::metrics::{summarize, EpisodeLog};
use lazydagger_core::policy::{split_dataset, train_bc, train_bc_epochs, Dataset, RobotPolicy};
use lazydagger_core::rng::{derive_seed, stream};
use lazydagger_core::safety::{
    calibrate_tau_sup, label_dataset, train_on_labels, AbsoluteThresholds, Calibration, DiscrepancyClassifier,
    ThresholdPair,
};
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmId, ExperimentConfig, ThresholdSetting};
use crate::report::{
    latency_table, write_csv, Budget, EpochRow, ResolvedThresholds, RunSummary, SeedSummary, CSV_SCHEMA,
    SUMMARY_SCHEMA,
};
use crate::{create_dir, read_json, write_atomic, write_json, HarnessError, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for the seed sweep; 0 means one per core.
    pub jobs: usize,
    /// Stop every seed once this many epochs are checkpointed. Used to
    /// exercise resumption.
    pub stop_after_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub harness: String,
    pub core: String,
    pub checkpoint_format: u32,
    pub csv_schema: u32,
    pub summary_schema: u32,
}

impl Versions {
    fn current() -> Self {
        Versions {
            harness: env!("CARGO_PKG_VERSION").into(),
            core: lazydagger_core::VERSION.into(),
            checkpoint_format: checkpoint::VERSION,
            csv_schema: CSV_SCHEMA,
            summary_schema: SUMMARY_SCHEMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: Option<u64>,
    #[serde(default)]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub thresholds: ResolvedThresholds,
    pub budget: Budget,
    pub final_policy_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Vec<SeedManifest>,
    pub versions: Versions,
    pub wall_clock: WallClock,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    run_experiment_with(config, &RunOptions::default())
}

/// Runs every seed of `config`, resuming whatever an earlier invocation
/// with the same config left behind.
pub fn run_experiment_with(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let config = config.clone().resolve()?;
    let hash = config.content_hash();
    let out = config.output_dir.clone();
    create_dir(&out)?;
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() {
        let old: RunManifest = read_json(&manifest_path)?;
        if old.config_hash != hash {
            return Err(HarnessError::OutputMismatch {
                dir: out,
                found: old.config_hash,
                expected: hash,
            });
        }
    }
    let clock = Instant::now();
    let mut manifest = RunManifest {
        schema: MANIFEST_SCHEMA,
        status: RunStatus::Running,
        config: config.clone(),
        config_hash: hash.clone(),
        seeds: Vec::new(),
        versions: Versions::current(),
        wall_clock: WallClock {
            started_unix: unix_now(),
            finished_unix: None,
            seconds: None,
        },
    };
    write_json(&manifest_path, &manifest)?;

    let env = config.env.build()?;
    let extra = extra_budget(&config)?;
    let summaries = sweep(&config, &hash, env.as_ref(), extra, opts)?;

    let env_id = env.scene().kind;
    let summary = RunSummary::aggregate(
        config.algorithm,
        &env_id,
        &hash,
        &config.latency_grid,
        config.burden_budget,
        &summaries,
    );
    write_json(&out.join("summary.json"), &summary)?;
    write_csv(&out.join("aggregate.csv"), &summary.rows, &config.latency_grid)?;

    manifest.status = RunStatus::Complete;
    manifest.seeds = summaries
        .iter()
        .map(|s| SeedManifest {
            seed: s.seed,
            thresholds: s.thresholds.clone(),
            budget: s.budget.clone(),
            final_policy_hash: s.final_policy_hash.clone(),
        })
        .collect();
    manifest.wall_clock.finished_unix = Some(unix_now());
    manifest.wall_clock.seconds = Some(clock.elapsed().as_secs_f64());
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy)]
struct ExtraBudget {
    pairs: usize,
    reference_mean: Option<f64>,
}

fn extra_budget(config: &ExperimentConfig) -> Result<ExtraBudget> {
    if let Some(reference) = &config.budget_reference {
        let r = RunSummary::load(reference)?;
        return Ok(ExtraBudget {
            pairs: r.mean_online_pairs.round() as usize,
            reference_mean: Some(r.mean_online_pairs),
        });
    }
    Ok(ExtraBudget {
        pairs: config.bc_extra_pairs.unwrap_or(0),
        reference_mean: None,
    })
}

fn sweep(
    config: &ExperimentConfig,
    hash: &str,
    env: &dyn Environment,
    extra: ExtraBudget,
    opts: &RunOptions,
) -> Result<Vec<SeedSummary>> {
    let seeds = &config.seeds;
    let jobs = match opts.jobs {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        j => j,
    }
    .min(seeds.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedSummary>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed(config, hash, env, seeds[i], extra, opts);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Everything besides the learner state needed to resume a seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    config_hash: String,
    thresholds: ResolvedThresholds,
    budget: Budget,
    initial_policy_hash: String,
    initial_classifier_hash: Option<String>,
    rows: Vec<EpochRow>,
    c_total: usize,
    d_total: usize,
    /// Epochs whose rows, logs and state are on disk.
    completed_epochs: usize,
}

struct SeedDirs {
    root: PathBuf,
    episodes: PathBuf,
    tests: PathBuf,
    checkpoints: PathBuf,
}

impl SeedDirs {
    fn new(out: &Path, seed: u64) -> Result<Self> {
        let root = out.join(format!("seed-{seed}"));
        let d = SeedDirs {
            episodes: root.join("episodes"),
            tests: root.join("tests"),
            checkpoints: root.join("checkpoints"),
            root,
        };
        for p in [&d.episodes, &d.tests, &d.checkpoints] {
            create_dir(p)?;
        }
        Ok(d)
    }

    fn episode_file(&self, epoch: usize) -> PathBuf {
        self.episodes.join(format!("epoch-{epoch:03}.jsonl"))
    }

    fn test_file(&self, after: usize) -> PathBuf {
        self.tests.join(format!("after-{after:03}.jsonl"))
    }

    fn state_file(&self) -> PathBuf {
        self.checkpoints.join("state.json")
    }

    fn progress_file(&self) -> PathBuf {
        self.checkpoints.join("progress.json")
    }
}

fn write_logs(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let mut buf = Vec::new();
    for log in logs {
        serde_json::to_writer(&mut buf, log).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        buf.write_all(b"\n").expect("writing to a Vec");
    }
    write_atomic(path, &buf)
}

pub fn read_logs(path: &Path) -> Result<Vec<EpisodeLog>> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingArtifact(path.to_path_buf())
        } else {
            HarnessError::io(path, e)
        }
    })?;
    let mut logs = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        logs.push(serde_json::from_str(&line).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(logs)
}

/// All interactive episode logs of a finished seed directory, in order.
pub fn read_seed_episodes(seed_dir: &Path, epochs: usize) -> Result<Vec<EpisodeLog>> {
    let mut all = Vec::new();
    for e in 0..epochs {
        all.extend(read_logs(&seed_dir.join("episodes").join(format!("epoch-{e:03}.jsonl")))?);
    }
    Ok(all)
}

fn layers(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

/// Pretrained learner and the numbers derived from it.
pub struct Pretrained {
    pub offline: Dataset,
    pub policy_data: Dataset,
    pub safe_data: Dataset,
    pub policy: RobotPolicy,
    pub classifier: Option<DiscrepancyClassifier>,
    pub thresholds: ResolvedThresholds,
}

/// Offline collection, the policy/classifier split, BC pretraining (or
/// loading `init_from`), threshold resolution and classifier pretraining.
pub fn pretrain(config: &ExperimentConfig, env: &dyn Environment, seed: u64) -> Result<Pretrained> {
    let spec = env.spec().clone();
    let mut sup = AnalyticSupervisor::new(env);
    let offline = collect_offline(env, &mut sup, config.offline_pairs, seed)?;
    let (policy_data, safe_data) = split_dataset(&offline, config.split_fraction, seed)?;
    let tc = &config.training;
    let wants_classifier = config.algorithm.uses_classifier();

    let (policy, loaded_classifier) = match &config.init_from {
        Some(dir) => {
            let ck = dir.join(format!("seed-{seed}")).join("checkpoints");
            let policy = load_checkpoint(&ck.join("policy_final.json"))?.into_policy()?;
            let classifier = if wants_classifier {
                Some(load_checkpoint(&ck.join("classifier_final.json"))?.into_classifier()?)
            } else {
                None
            };
            (policy, classifier)
        }
        None => {
            let p0 = RobotPolicy::init(
                &layers(spec.state_dim, &config.network.policy_hidden, spec.action_dim),
                spec.bounds.clone(),
                derive_seed(seed, &[stream::POLICY_INIT]),
            )?;
            let p = train_bc_epochs(
                &p0,
                &policy_data,
                &tc.policy,
                config.bc_pretrain_epochs,
                derive_seed(seed, &[stream::PRETRAIN_POLICY]),
            )?
            .model;
            (p, None)
        }
    };

    let max_discrepancy = env.max_action_discrepancy();
    let thresholds = match config.thresholds {
        ThresholdSetting::Calibrate { target } => {
            let cal: Calibration = calibrate_tau_sup(&policy, &offline, target)?;
            ResolvedThresholds {
                tau_sup: cal.tau_sup,
                tau_auto: config.tau_auto_ratio * cal.tau_sup,
                max_discrepancy,
                calibration: Some(cal),
            }
        }
        ThresholdSetting::Fractions { tau_sup, tau_auto } => {
            let abs = ThresholdPair::new(tau_sup, tau_auto)?.to_absolute(max_discrepancy);
            ResolvedThresholds {
                tau_sup: abs.tau_sup,
                tau_auto: abs.tau_auto,
                max_discrepancy,
                calibration: None,
            }
        }
    };

    let classifier = match (wants_classifier, loaded_classifier) {
        (false, _) => None,
        (true, Some(c)) => Some(c),
        (true, None) => {
            let mut c = DiscrepancyClassifier::init(
                &layers(spec.state_dim, &config.network.classifier_hidden, 1),
                derive_seed(seed, &[stream::CLASSIFIER_INIT]),
            )?;
            let union = policy_data.union(&safe_data);
            let labels = label_dataset(&union, &policy, thresholds.tau_sup)?;
            for e in 0..config.bc_pretrain_epochs {
                let s = derive_seed(seed, &[stream::PRETRAIN_CLASSIFIER, e as u64]);
                c = train_on_labels(&c, union.pairs(), &labels, &tc.classifier, s)?.outcome.model;
            }
            Some(c)
        }
    };

    Ok(Pretrained {
        offline,
        policy_data,
        safe_data,
        policy,
        classifier,
        thresholds,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(HarnessError::MissingArtifact(path.to_path_buf()));
    }
    Ok(Checkpoint::load(path)?)
}

/// Resolves thresholds for every seed of `config` without running the
/// algorithm.
pub fn calibrate(config: &ExperimentConfig) -> Result<Vec<(u64, ResolvedThresholds)>> {
    let config = config.clone().resolve()?;
    let env = config.env.build()?;
    config
        .seeds
        .iter()
        .map(|&seed| Ok((seed, pretrain(&config, env.as_ref(), seed)?.thresholds)))
        .collect()
}

struct TestResult {
    row_success: f64,
    row_return: f64,
    supervisor_steps: usize,
}

fn run_tests(
    config: &ExperimentConfig,
    env: &dyn Environment,
    policy: &RobotPolicy,
    seed: u64,
    after: usize,
    dirs: &SeedDirs,
) -> Result<TestResult> {
    let logs = test_episodes(
        env,
        policy,
        config.test_rollouts,
        derive_seed(seed, &[stream::TEST, after as u64]),
        after,
    )?;
    write_logs(&dirs.test_file(after), &logs)?;
    let n = logs.len() as f64;
    Ok(TestResult {
        row_success: logs.iter().filter(|l| l.success).count() as f64 / n,
        row_return: logs.iter().map(|l| l.total_reward).sum::<f64>() / n,
        supervisor_steps: logs
            .iter()
            .flat_map(|l| &l.records)
            .filter(|r| r.mode == Mode::Supervisor)
            .count(),
    })
}

fn save_network_checkpoints(dirs: &SeedDirs, tag: &str, state: &RunState) -> Result<()> {
    let p = dirs.checkpoints.join(format!("policy-{tag}.json"));
    Checkpoint::from_policy(&state.policy).save(&p).map_err(HarnessError::from)?;
    if let Some(c) = &state.classifier {
        let p = dirs.checkpoints.join(format!("classifier-{tag}.json"));
        Checkpoint::from_classifier(c).save(&p)?;
    }
    Ok(())
}

/// Checkpoints one finished epoch: network files, learner state, then the
/// progress record that marks the epoch as done.
fn commit_epoch(dirs: &SeedDirs, progress: &Progress, state: &RunState) -> Result<()> {
    save_network_checkpoints(dirs, &format!("epoch-{:03}", progress.completed_epochs), state)?;
    write_json(&dirs.state_file(), state)?;
    write_json(&dirs.progress_file(), progress)
}

fn load_progress(dirs: &SeedDirs, hash: &str) -> Result<Option<(Progress, RunState)>> {
    if !dirs.progress_file().exists() || !dirs.state_file().exists() {
        return Ok(None);
    }
    let progress: Progress = read_json(&dirs.progress_file())?;
    if progress.config_hash != hash {
        return Ok(None);
    }
    let state: RunState = read_json(&dirs.state_file())?;
    if state.next_epoch != progress.completed_epochs {
        return Ok(None);
    }
    Ok(Some((progress, state)))
}

fn start_seed(
    config: &ExperimentConfig,
    hash: &str,
    env: &dyn Environment,
    seed: u64,
    extra: ExtraBudget,
    dirs: &SeedDirs,
) -> Result<(Progress, RunState)> {
    let pre = pretrain(config, env, seed)?;
    let initial_policy_hash = checkpoint::policy_hash(&pre.policy);
    let initial_classifier_hash = pre
        .classifier
        .as_ref()
        .map(|c| Checkpoint::from_classifier(c).content_hash());
    let test = run_tests(config, env, &pre.policy, seed, 0, dirs)?;
    if test.supervisor_steps > 0 {
        return Err(HarnessError::TestPurity {
            seed,
            steps: test.supervisor_steps,
        });
    }
    let mut budget = Budget {
        offline_pairs: pre.offline.len(),
        extra_offline_pairs: 0,
        online_pairs: 0,
        reference_online_pairs_mean: extra.reference_mean,
    };
    let state = if config.algorithm == AlgorithmId::Bc {
        let mut data = pre.offline.clone();
        if extra.pairs > 0 {
            let mut sup = AnalyticSupervisor::new(env);
            data.extend(&collect_offline(
                env,
                &mut sup,
                extra.pairs,
                derive_seed(seed, &[stream::EXTRA_OFFLINE]),
            )?);
            budget.extra_offline_pairs = extra.pairs;
        }
        RunState::new(pre.policy, None, data, Dataset::new())
    } else {
        RunState::new(pre.policy, pre.classifier, pre.policy_data, pre.safe_data)
    };
    let progress = Progress {
        config_hash: hash.to_string(),
        thresholds: pre.thresholds,
        budget,
        initial_policy_hash,
        initial_classifier_hash,
        rows: vec![EpochRow {
            epoch: 0,
            test_success_rate: test.row_success,
            mean_test_return: test.row_return,
            c_total: 0.0,
            d_total: 0.0,
        }],
        c_total: 0,
        d_total: 0,
        completed_epochs: 0,
    };
    save_network_checkpoints(dirs, "epoch-000", &state)?;
    write_json(&dirs.state_file(), &state)?;
    write_json(&dirs.progress_file(), &progress)?;
    Ok((progress, state))
}

fn run_seed(
    config: &ExperimentConfig,
    hash: &str,
    env: &dyn Environment,
    seed: u64,
    extra: ExtraBudget,
    opts: &RunOptions,
) -> Result<SeedSummary> {
    let dirs = SeedDirs::new(&config.output_dir, seed)?;
    let summary_path = dirs.root.join("summary.json");
    if summary_path.exists() {
        let done: SeedSummary = read_json(&summary_path)?;
        if done.config_hash == hash {
            return Ok(done);
        }
    }
    let (mut progress, mut state) = match load_progress(&dirs, hash)? {
        Some(p) => p,
        None => start_seed(config, hash, env, seed, extra, &dirs)?,
    };
    let stop_at = opts.stop_after_epochs.filter(|&k| k < config.epochs);
    let interrupted = |epoch: usize| HarnessError::Interrupted { seed, epoch };
    if stop_at.is_some_and(|k| progress.completed_epochs >= k) {
        return Err(interrupted(progress.completed_epochs));
    }

    match config.algorithm.interactive() {
        None => {
            while state.next_epoch < config.epochs {
                let e = state.next_epoch;
                let s = derive_seed(seed, &[stream::REFIT_POLICY, e as u64]);
                state.policy = train_bc(&state.policy, &state.dataset, &config.training.policy, s)?.model;
                state.next_epoch += 1;
                write_logs(&dirs.episode_file(e), &[])?;
                finish_epoch(config, env, seed, &dirs, &mut progress, &state, &[])?;
                if stop_at == Some(progress.completed_epochs) {
                    return Err(interrupted(progress.completed_epochs));
                }
            }
        }
        Some(algorithm) => {
            let lazy = LazyConfig {
                epochs: config.epochs,
                steps_per_epoch: config.steps_per_epoch,
                thresholds: AbsoluteThresholds {
                    tau_sup: progress.thresholds.tau_sup,
                    tau_auto: progress.thresholds.tau_auto,
                },
                sigma2: config.sigma2_resolved(),
                update_policy: config.update_policy_resolved(),
                inject_noise: algorithm == lazydagger_core::meta::Algorithm::LazyDagger
                    && config.sigma2_resolved() > 0.0,
            };
            let mut sup = AnalyticSupervisor::new(env);
            let mut failure: Option<HarnessError> = None;
            let mut observer = FnObserver(|report: &EpochReport<'_>| {
                let r = (|| -> Result<()> {
                    write_logs(&dirs.episode_file(report.epoch), report.logs)?;
                    finish_epoch(config, env, seed, &dirs, &mut progress, report.state, report.logs)?;
                    if stop_at == Some(progress.completed_epochs) {
                        return Err(interrupted(progress.completed_epochs));
                    }
                    Ok(())
                })();
                r.map_err(|e| {
                    let msg = e.to_string();
                    failure = Some(e);
                    msg
                })
            });
            let outcome = run_interactive(
                algorithm,
                env,
                &mut state,
                &mut sup as &mut dyn Supervisor,
                &lazy,
                &config.training,
                seed,
                &mut observer,
            );
            if let Err(e) = outcome {
                return Err(failure.take().unwrap_or(HarnessError::Core(e)));
            }
        }
    }
    finalize_seed(config, hash, seed, &dirs, progress, &state)
}

fn finish_epoch(
    config: &ExperimentConfig,
    env: &dyn Environment,
    seed: u64,
    dirs: &SeedDirs,
    progress: &mut Progress,
    state: &RunState,
    logs: &[EpisodeLog],
) -> Result<()> {
    let after = progress.completed_epochs + 1;
    let test = run_tests(config, env, &state.policy, seed, after, dirs)?;
    if test.supervisor_steps > 0 {
        return Err(HarnessError::TestPurity {
            seed,
            steps: test.supervisor_steps,
        });
    }
    let burden = summarize(logs)?;
    progress.c_total += burden.totals.context_switches;
    progress.d_total += burden.totals.supervisor_actions;
    progress.rows.push(EpochRow {
        epoch: after,
        test_success_rate: test.row_success,
        mean_test_return: test.row_return,
        c_total: progress.c_total as f64,
        d_total: progress.d_total as f64,
    });
    progress.completed_epochs = after;
    commit_epoch(dirs, progress, state)
}

fn finalize_seed(
    config: &ExperimentConfig,
    hash: &str,
    seed: u64,
    dirs: &SeedDirs,
    mut progress: Progress,
    state: &RunState,
) -> Result<SeedSummary> {
    let logs = read_seed_episodes(&dirs.root, config.epochs)?;
    let burden = summarize(&logs)?;
    let perturbed = logs
        .iter()
        .flat_map(|l| &l.records)
        .filter(|r| {
            r.supervisor_action
                .as_ref()
                .is_some_and(|a| *a != r.executed_action && r.robot_action != r.executed_action)
        })
        .count();
    let mut test_supervisor_steps = 0;
    for after in 0..=config.epochs {
        test_supervisor_steps += read_logs(&dirs.test_file(after))?
            .iter()
            .flat_map(|l| &l.records)
            .filter(|r| r.mode == Mode::Supervisor)
            .count();
    }
    if config.algorithm != AlgorithmId::Bc {
        progress.budget.online_pairs = state.dataset.online_count();
    }
    Checkpoint::from_policy(&state.policy).save(&dirs.checkpoints.join("policy_final.json"))?;
    if let Some(c) = &state.classifier {
        Checkpoint::from_classifier(c).save(&dirs.checkpoints.join("classifier_final.json"))?;
    }
    let last = progress.rows.last().expect("epoch 0 row exists").clone();
    let summary = SeedSummary {
        schema: SUMMARY_SCHEMA,
        seed,
        algorithm: config.algorithm,
        config_hash: hash.to_string(),
        burden_at: latency_table(
            &config.latency_grid,
            burden.totals.context_switches as f64,
            burden.totals.supervisor_actions as f64,
            config.burden_budget,
        ),
        burden,
        thresholds: progress.thresholds,
        budget: progress.budget,
        final_test_success_rate: last.test_success_rate,
        final_mean_test_return: last.mean_test_return,
        test_supervisor_steps,
        initial_policy_hash: progress.initial_policy_hash,
        final_policy_hash: checkpoint::policy_hash(&state.policy),
        initial_classifier_hash: progress.initial_classifier_hash,
        final_classifier_hash: state
            .classifier
            .as_ref()
            .map(|c| Checkpoint::from_classifier(c).content_hash()),
        perturbed_supervisor_steps: perturbed,
        rows: progress.rows,
    };
    write_csv(&dirs.root.join("metrics.csv"), &summary.rows, &config.latency_grid)?;
    write_json(&dirs.root.join("summary.json"), &summary)?;
    Ok(summary)
}
