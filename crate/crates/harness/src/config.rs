//! Experiment configuration: parsing, defaults and validation.
//!
//! A config is a single JSON document. Every field except `algorithm` has a
//! default; the resolved config (defaults filled in) is what gets hashed and
//! echoed into the run manifest.

use std::fmt;
use std::path::PathBuf;

use lazydagger_core::env::EnvConfig;
use lazydagger_core::meta::{Algorithm, TrainSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Default noise variance for LazyDAgger's executed supervisor actions.
pub const DEFAULT_SIGMA2: f64 = 0.05;
pub const DEFAULT_LATENCY_GRID: [f64; 7] = [0.0, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgorithmId {
    #[serde(rename = "bc")]
    Bc,
    #[serde(rename = "dagger")]
    Dagger,
    #[serde(rename = "safedagger")]
    SafeDagger,
    #[serde(rename = "lazydagger")]
    LazyDagger,
    #[serde(rename = "safedagger-exec")]
    SafeDaggerExec,
    #[serde(rename = "lazydagger-exec")]
    LazyDaggerExec,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 6] = [
        AlgorithmId::Bc,
        AlgorithmId::Dagger,
        AlgorithmId::SafeDagger,
        AlgorithmId::LazyDagger,
        AlgorithmId::SafeDaggerExec,
        AlgorithmId::LazyDaggerExec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmId::Bc => "bc",
            AlgorithmId::Dagger => "dagger",
            AlgorithmId::SafeDagger => "safedagger",
            AlgorithmId::LazyDagger => "lazydagger",
            AlgorithmId::SafeDaggerExec => "safedagger-exec",
            AlgorithmId::LazyDaggerExec => "lazydagger-exec",
        }
    }

    pub fn is_execution(self) -> bool {
        matches!(self, AlgorithmId::SafeDaggerExec | AlgorithmId::LazyDaggerExec)
    }

    /// The interactive loop behind this id; `None` for offline BC.
    pub fn interactive(self) -> Option<Algorithm> {
        match self {
            AlgorithmId::Bc => None,
            AlgorithmId::Dagger => Some(Algorithm::Dagger),
            AlgorithmId::SafeDagger | AlgorithmId::SafeDaggerExec => Some(Algorithm::SafeDagger),
            AlgorithmId::LazyDagger | AlgorithmId::LazyDaggerExec => Some(Algorithm::LazyDagger),
        }
    }

    pub fn uses_classifier(self) -> bool {
        !matches!(self, AlgorithmId::Bc | AlgorithmId::Dagger)
    }

    fn default_sigma2(self) -> f64 {
        if self == AlgorithmId::LazyDagger {
            DEFAULT_SIGMA2
        } else {
            0.0
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either fixed thresholds, as fractions of the largest possible action
/// discrepancy, or `"calibrate:<fraction>"`: pick `tau_sup` after
/// pretraining so that the given fraction of offline pairs is unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub enum ThresholdSetting {
    Calibrate { target: f64 },
    Fractions { tau_sup: f64, tau_auto: f64 },
}

impl Default for ThresholdSetting {
    fn default() -> Self {
        ThresholdSetting::Calibrate { target: 0.2 }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawThresholds {
    Text(String),
    Pair {
        tau_sup: f64,
        tau_auto: f64,
    },
}

impl TryFrom<RawThresholds> for ThresholdSetting {
    type Error = String;

    fn try_from(raw: RawThresholds) -> Result<Self, String> {
        match raw {
            RawThresholds::Pair { tau_sup, tau_auto } => Ok(ThresholdSetting::Fractions { tau_sup, tau_auto }),
            RawThresholds::Text(s) => {
                let target = s
                    .strip_prefix("calibrate:")
                    .and_then(|t| t.trim().parse::<f64>().ok())
                    .ok_or_else(|| format!("expected \"calibrate:<fraction>\" or {{tau_sup, tau_auto}}, got {s:?}"))?;
                Ok(ThresholdSetting::Calibrate { target })
            }
        }
    }
}

impl From<ThresholdSetting> for RawThresholds {
    fn from(t: ThresholdSetting) -> Self {
        match t {
            ThresholdSetting::Calibrate { target } => RawThresholds::Text(format!("calibrate:{target}")),
            ThresholdSetting::Fractions { tau_sup, tau_auto } => RawThresholds::Pair { tau_sup, tau_auto },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub policy_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            policy_hidden: vec![64, 64],
            classifier_hidden: vec![32, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub env: EnvConfig,
    pub algorithm: AlgorithmId,
    #[serde(default = "defaults::offline_pairs")]
    pub offline_pairs: usize,
    /// Share of the offline pairs that seeds the policy dataset; the rest is
    /// held out for the classifier.
    #[serde(default = "defaults::split_fraction")]
    pub split_fraction: f64,
    #[serde(default = "defaults::bc_pretrain_epochs")]
    pub bc_pretrain_epochs: usize,
    /// Interactive epochs `N` (extra training epochs for `bc`).
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    /// Environment steps per interactive epoch, `T`.
    #[serde(default = "defaults::steps_per_epoch")]
    pub steps_per_epoch: usize,
    #[serde(default)]
    pub thresholds: ThresholdSetting,
    /// `tau_auto / tau_sup` when calibrating.
    #[serde(default = "defaults::tau_auto_ratio")]
    pub tau_auto_ratio: f64,
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default)]
    pub update_policy: Option<bool>,
    #[serde(default = "defaults::latency_grid")]
    pub latency_grid: Vec<f64>,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    /// Burden budget; only used to flag latencies where it is exceeded.
    #[serde(default)]
    pub burden_budget: Option<f64>,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::test_rollouts")]
    pub test_rollouts: usize,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainSettings,
    /// Extra supervisor pairs granted to `bc`.
    #[serde(default)]
    pub bc_extra_pairs: Option<usize>,
    /// Finished run whose mean online pair count sets `bc_extra_pairs`.
    #[serde(default)]
    pub budget_reference: Option<PathBuf>,
    /// Finished run whose final networks replace pretraining.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
}

mod defaults {
    use std::path::PathBuf;

    pub fn offline_pairs() -> usize {
        4000
    }
    pub fn split_fraction() -> f64 {
        0.7
    }
    pub fn bc_pretrain_epochs() -> usize {
        5
    }
    pub fn epochs() -> usize {
        10
    }
    pub fn steps_per_epoch() -> usize {
        1000
    }
    pub fn tau_auto_ratio() -> f64 {
        0.5
    }
    pub fn latency_grid() -> Vec<f64> {
        super::DEFAULT_LATENCY_GRID.to_vec()
    }
    pub fn seeds() -> Vec<u64> {
        vec![0]
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/experiment")
    }
    pub fn test_rollouts() -> usize {
        10
    }
}

/// One violated rule, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid experiment config")?;
        for i in &self.issues {
            write!(f, "\n  {}: {}", i.path, i.message)?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            issues: vec![ConfigIssue {
                path: path.into(),
                message: message.into(),
            }],
        }
    }

    pub fn has_path(&self, path: &str) -> bool {
        self.issues.iter().any(|i| i.path == path)
    }
}

/// Parses, validates and resolves a config. Structural errors stop at the
/// first offending field; semantic checks report every violation.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::single(if path == "." { "<root>".to_string() } else { path }, e.inner().to_string())
    })?;
    config.resolve()
}

impl ExperimentConfig {
    /// Default config for an algorithm.
    pub fn new(algorithm: AlgorithmId) -> Self {
        serde_json::from_value(serde_json::json!({ "algorithm": algorithm })).expect("defaults deserialize")
    }

    /// Runs the semantic checks and fills in algorithm-dependent defaults.
    pub fn resolve(mut self) -> Result<ExperimentConfig, ConfigError> {
        let issues = self.issues();
        if !issues.is_empty() {
            return Err(ConfigError { issues });
        }
        self.sigma2 = Some(self.sigma2.unwrap_or(self.algorithm.default_sigma2()));
        self.update_policy = Some(self.update_policy.unwrap_or(!self.algorithm.is_execution()));
        Ok(self)
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| {
            out.push(ConfigIssue {
                path: path.to_string(),
                message,
            })
        };
        let alg = self.algorithm;

        if let Err(e) = self.env.build() {
            bad("env", e.to_string());
        }
        if self.offline_pairs < 2 {
            bad("offline_pairs", format!("need at least 2 pairs to split, got {}", self.offline_pairs));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            bad("split_fraction", format!("must lie in (0, 1), got {}", self.split_fraction));
        }
        if self.epochs > 0 && self.steps_per_epoch == 0 && alg != AlgorithmId::Bc {
            bad("steps_per_epoch", "must be >= 1".into());
        }
        match self.thresholds {
            ThresholdSetting::Calibrate { target } => {
                if !(target > 0.0 && target < 1.0) {
                    bad("thresholds", format!("calibration target must lie in (0, 1), got {target}"));
                }
            }
            ThresholdSetting::Fractions { tau_sup, tau_auto } => {
                if !(tau_sup.is_finite() && tau_sup >= 0.0) {
                    bad("thresholds.tau_sup", format!("must be finite and >= 0, got {tau_sup}"));
                }
                if !(tau_auto.is_finite() && tau_auto >= 0.0) {
                    bad("thresholds.tau_auto", format!("must be finite and >= 0, got {tau_auto}"));
                }
                if tau_auto > tau_sup {
                    bad(
                        "thresholds.tau_auto",
                        format!("tau_auto ({tau_auto}) must not exceed tau_sup ({tau_sup})"),
                    );
                }
            }
        }
        if !(0.0..=1.0).contains(&self.tau_auto_ratio) {
            bad("tau_auto_ratio", format!("must lie in [0, 1], got {}", self.tau_auto_ratio));
        }
        if let Some(s) = self.sigma2 {
            if !(s.is_finite() && s >= 0.0) {
                bad("sigma2", format!("must be finite and >= 0, got {s}"));
            } else if s > 0.0 && alg.is_execution() {
                bad("sigma2", format!("{alg} never injects noise; sigma2 must be 0, got {s}"));
            }
        }
        if self.update_policy == Some(true) && alg.is_execution() {
            bad("update_policy", format!("{alg} runs a frozen policy"));
        }
        if self.latency_grid.is_empty() {
            bad("latency_grid", "must not be empty".into());
        }
        for (i, l) in self.latency_grid.iter().enumerate() {
            if !(l.is_finite() && *l >= 0.0) {
                bad(&format!("latency_grid[{i}]"), format!("must be finite and >= 0, got {l}"));
            }
        }
        if self.seeds.is_empty() {
            bad("seeds", "must list at least one seed".into());
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                bad(&format!("seeds[{i}]"), format!("duplicate seed {s}"));
            }
        }
        if let Some(b) = self.burden_budget {
            if !(b.is_finite() && b >= 0.0) {
                bad("burden_budget", format!("must be finite and >= 0, got {b}"));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            bad("output_dir", "must not be empty".into());
        }
        if self.test_rollouts == 0 {
            bad("test_rollouts", "must be >= 1 so that success rates are defined".into());
        }
        for (name, hidden) in [
            ("network.policy_hidden", &self.network.policy_hidden),
            ("network.classifier_hidden", &self.network.classifier_hidden),
        ] {
            if hidden.contains(&0) {
                bad(name, "layer widths must be >= 1".into());
            }
        }
        for (name, tc) in [("training.policy", &self.training.policy), ("training.classifier", &self.training.classifier)] {
            if let Err(e) = tc.validate() {
                bad(name, e.to_string());
            }
        }
        if alg != AlgorithmId::Bc {
            if self.bc_extra_pairs.is_some() {
                bad("bc_extra_pairs", format!("only applies to bc, not {alg}"));
            }
            if self.budget_reference.is_some() {
                bad("budget_reference", format!("only applies to bc, not {alg}"));
            }
        } else if self.bc_extra_pairs.is_some() && self.budget_reference.is_some() {
            bad("bc_extra_pairs", "give either bc_extra_pairs or budget_reference, not both".into());
        }
        out
    }

    pub fn sigma2_resolved(&self) -> f64 {
        self.sigma2.unwrap_or(self.algorithm.default_sigma2())
    }

    pub fn update_policy_resolved(&self) -> bool {
        self.update_policy.unwrap_or(!self.algorithm.is_execution())
    }

    /// SHA-256 of the resolved config, ignoring where outputs go.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
