#![allow(dead_code)]

use std::time::{Duration, Instant};

use lazydagger_core::env::{EnvConfig, Environment};
use lazydagger_core::meta::{collect_offline, AnalyticSupervisor, LazyConfig, RunState, TrainSettings};
use lazydagger_core::policy::{split_dataset, train_bc_epochs, RobotPolicy, TrainConfig};
use lazydagger_core::rng::{derive_seed, stream};
use lazydagger_core::safety::{calibrate_tau_sup, label_dataset, train_on_labels, AbsoluteThresholds, DiscrepancyClassifier};
use lazydagger_intervention::SessionConfig;

pub const TOKEN: &str = "secret";

pub fn env() -> Box<dyn Environment> {
    EnvConfig::default().build().unwrap()
}

pub fn session(id: &str, env: &dyn Environment) -> SessionConfig {
    let mut c = SessionConfig::for_env(id, TOKEN, env);
    c.timeout = Duration::from_secs(30);
    c
}

pub fn train() -> TrainSettings {
    let quick = TrainConfig {
        gradient_steps_per_epoch: 60,
        ..TrainConfig::default()
    };
    TrainSettings {
        policy: quick.clone(),
        classifier: TrainConfig {
            gradient_steps_per_epoch: 1000,
            learning_rate: 3e-3,
            ..quick
        },
    }
}

/// A briefly pretrained learner whose classifier hands over now and then.
pub fn learner(env: &dyn Environment, seed: u64) -> (RunState, AbsoluteThresholds) {
    let spec = env.spec().clone();
    let train = train();
    let offline = collect_offline(env, &mut AnalyticSupervisor::new(env), 600, seed).unwrap();
    let (d, d_safe) = split_dataset(&offline, 0.7, derive_seed(seed, &[stream::SPLIT])).unwrap();
    let p0 = RobotPolicy::init(&[spec.state_dim, 32, spec.action_dim], spec.bounds.clone(), seed).unwrap();
    let policy = train_bc_epochs(&p0, &d, &train.policy, 2, seed).unwrap().model;
    let tau_sup = calibrate_tau_sup(&policy, &offline, 0.3).unwrap().tau_sup;
    let union = d.union(&d_safe);
    let labels = label_dataset(&union, &policy, tau_sup).unwrap();
    let c0 = DiscrepancyClassifier::init(&[spec.state_dim, 32, 32, 1], seed).unwrap();
    let classifier = train_on_labels(&c0, union.pairs(), &labels, &train.classifier, seed).unwrap().outcome.model;
    let thresholds = AbsoluteThresholds {
        tau_sup,
        tau_auto: 0.5 * tau_sup,
    };
    (RunState::new(policy, Some(classifier), d, d_safe), thresholds)
}

pub fn lazy_config(thresholds: AbsoluteThresholds, epochs: usize, steps: usize) -> LazyConfig {
    LazyConfig {
        epochs,
        steps_per_epoch: steps,
        thresholds,
        sigma2: 0.05,
        update_policy: true,
        inject_noise: true,
    }
}

pub fn wait_until(what: &str, mut done: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while !done() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(5));
    }
}
