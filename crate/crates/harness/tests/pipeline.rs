use std::path::Path;

use lazydagger_core::checkpoint::Checkpoint;
use lazydagger_core::meta::Mode;
use lazydagger_harness::run::{read_logs, read_seed_episodes};
use lazydagger_harness::{
    compare, run_experiment, run_experiment_with, AlgorithmId, ExperimentConfig, HarnessError, RunOptions, RunSummary,
    SeedSummary,
};

fn small(algorithm: AlgorithmId, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(algorithm);
    c.offline_pairs = 400;
    c.bc_pretrain_epochs = 2;
    c.epochs = 3;
    c.steps_per_epoch = 150;
    c.seeds = vec![3, 4];
    c.test_rollouts = 4;
    c.training.policy.gradient_steps_per_epoch = 40;
    c.training.classifier.gradient_steps_per_epoch = 40;
    c.output_dir = out.to_path_buf();
    c
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn seed_summary(out: &Path, seed: u64) -> SeedSummary {
    serde_json::from_str(&read(&out.join(format!("seed-{seed}/summary.json")))).unwrap()
}

#[test]
fn bc_without_epochs_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(AlgorithmId::Bc, dir.path());
    c.epochs = 0;
    run_experiment(&c).unwrap();
    let s = RunSummary::load(dir.path()).unwrap();
    assert_eq!(s.totals.context_switches, 0);
    assert_eq!(s.totals.supervisor_actions, 0);
    assert_eq!(s.rows.len(), 1);
    assert!((0.0..=1.0).contains(&s.final_test_success_rate));
    assert!(read(&dir.path().join("aggregate.csv")).starts_with("epoch,test_success_rate,mean_test_return,C_total,D_total,B_at_L0,"));
}

#[test]
fn same_config_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&small(AlgorithmId::LazyDagger, a.path())).unwrap();
    let mb = run_experiment(&small(AlgorithmId::LazyDagger, b.path())).unwrap();
    for f in ["aggregate.csv", "seed-3/metrics.csv", "seed-4/metrics.csv", "seed-3/episodes/epoch-002.jsonl"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let ma: lazydagger_harness::RunManifest = serde_json::from_str(&read(&a.path().join("manifest.json"))).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.seeds, mb.seeds);
}

#[test]
fn interrupted_runs_resume_to_the_same_result() {
    let full = tempfile::tempdir().unwrap();
    let cut = tempfile::tempdir().unwrap();
    run_experiment(&small(AlgorithmId::SafeDagger, full.path())).unwrap();
    let c = small(AlgorithmId::SafeDagger, cut.path());
    let stop = RunOptions {
        jobs: 1,
        stop_after_epochs: Some(1),
    };
    match run_experiment_with(&c, &stop) {
        Err(HarnessError::Interrupted { epoch: 1, .. }) => {}
        other => panic!("expected an interruption, got {other:?}"),
    }
    assert!(!cut.path().join("summary.json").exists());
    run_experiment(&c).unwrap();
    for f in ["aggregate.csv", "seed-3/metrics.csv", "seed-4/episodes/epoch-002.jsonl"] {
        assert_eq!(read(&full.path().join(f)), read(&cut.path().join(f)), "{f}");
    }
    assert_eq!(seed_summary(full.path(), 4).final_policy_hash, seed_summary(cut.path(), 4).final_policy_hash);
}

#[test]
fn output_dir_of_another_experiment_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(AlgorithmId::Bc, dir.path());
    c.epochs = 0;
    run_experiment(&c).unwrap();
    c.offline_pairs = 300;
    assert!(matches!(run_experiment(&c), Err(HarnessError::OutputMismatch { .. })));
}

#[test]
fn calibrated_thresholds_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&small(AlgorithmId::LazyDagger, dir.path())).unwrap();
    let text = read(&dir.path().join("manifest.json"));
    assert!(text.contains("\"calibrate:0.2\""), "{text}");
    for s in &m.seeds {
        let cal = s.thresholds.calibration.as_ref().unwrap();
        assert_eq!(cal.tau_sup, s.thresholds.tau_sup);
        assert!((cal.achieved_fraction - 0.2).abs() < 0.02);
        assert_eq!(s.thresholds.tau_auto, 0.5 * s.thresholds.tau_sup);
    }
}

#[test]
fn bc_gets_the_online_budget_of_the_reference_run() {
    let dir = tempfile::tempdir().unwrap();
    // Any interactive run can serve as the reference; DAgger always labels.
    let reference_dir = dir.path().join("dagger");
    run_experiment(&small(AlgorithmId::Dagger, &reference_dir)).unwrap();
    let reference = RunSummary::load(&reference_dir).unwrap();
    assert!(reference.mean_online_pairs > 0.0);

    let mut c = small(AlgorithmId::Bc, &dir.path().join("bc"));
    c.budget_reference = Some(reference_dir.clone());
    let m = run_experiment(&c).unwrap();
    for s in &m.seeds {
        assert_eq!(s.budget.extra_offline_pairs, reference.mean_online_pairs.round() as usize);
        assert_eq!(s.budget.reference_online_pairs_mean, Some(reference.mean_online_pairs));
        assert_eq!(s.budget.offline_pairs, 400);
    }
    let bc = RunSummary::load(&dir.path().join("bc")).unwrap();
    assert_eq!((bc.totals.context_switches, bc.totals.supervisor_actions), (0, 0));
}

#[test]
fn test_rollouts_never_ask_the_supervisor() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small(AlgorithmId::Dagger, dir.path())).unwrap();
    for seed in [3, 4] {
        assert_eq!(seed_summary(dir.path(), seed).test_supervisor_steps, 0);
        for after in 0..=3 {
            let logs = read_logs(&dir.path().join(format!("seed-{seed}/tests/after-{after:03}.jsonl"))).unwrap();
            assert_eq!(logs.len(), 4);
            assert!(logs.iter().flat_map(|l| &l.records).all(|r| r.mode == Mode::Autonomous));
        }
        let episodes = read_seed_episodes(&dir.path().join(format!("seed-{seed}")), 3).unwrap();
        assert!(episodes.iter().flat_map(|l| &l.records).all(|r| r.mode == Mode::Supervisor));
    }
}

#[test]
fn execution_variants_keep_the_trained_networks() {
    let dir = tempfile::tempdir().unwrap();
    let trained = dir.path().join("lazy");
    run_experiment(&small(AlgorithmId::LazyDagger, &trained)).unwrap();
    for alg in [AlgorithmId::LazyDaggerExec, AlgorithmId::SafeDaggerExec] {
        let out = dir.path().join(alg.name());
        let mut c = small(alg, &out);
        c.init_from = Some(trained.clone());
        run_experiment(&c).unwrap();
        for seed in [3, 4] {
            let src = seed_summary(&trained, seed);
            let s = seed_summary(&out, seed);
            assert_eq!(s.initial_policy_hash, src.final_policy_hash);
            assert_eq!(s.final_policy_hash, src.final_policy_hash);
            assert_eq!(s.final_classifier_hash, src.final_classifier_hash);
            assert_eq!(s.perturbed_supervisor_steps, 0);
            let saved = Checkpoint::load(&out.join(format!("seed-{seed}/checkpoints/policy_final.json"))).unwrap();
            assert_eq!(saved.content_hash(), src.final_policy_hash);
        }
    }
}

#[test]
fn comparing_a_run_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small(AlgorithmId::SafeDagger, dir.path())).unwrap();
    let cmp = compare(dir.path(), dir.path(), &[0.0, 1.0, 2.0]).unwrap();
    assert_eq!(cmp.switch_ratio, Some(1.0));
    assert_eq!(cmp.action_ratio, Some(1.0));
    assert!(cmp.cutoff_latency.value().is_none());
    let other = tempfile::tempdir().unwrap();
    let mut c = small(AlgorithmId::SafeDagger, other.path());
    c.seeds = vec![3];
    run_experiment(&c).unwrap();
    assert!(matches!(
        compare(dir.path(), other.path(), &[0.0]),
        Err(HarnessError::SchemaMismatch(_))
    ));
}
