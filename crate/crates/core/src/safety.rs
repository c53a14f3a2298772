//! Action-discrepancy classifier.
//!
//! The classifier `f(s) ∈ [0, 1]` predicts whether the robot policy's action
//! at `s` is at least `τ_sup` away (Euclidean) from the supervisor's. It is
//! trained with binary cross-entropy on labels recomputed from the current
//! policy at every training call.

use serde::{Deserialize, Serialize};

use crate::env::{EnvAction, EnvState};
use crate::nn::{sample_batch, Mlp, Optimizer, Trace};
use crate::policy::{Dataset, LabeledPair, RobotPolicy, TrainConfig, TrainOutcome};
use crate::rng::rng_for;
use crate::{Error, Result};

/// Predictions are clamped to `[BCE_EPS, 1 − BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Default hidden layers.
pub const CLASSIFIER_HIDDEN: [usize; 2] = [32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyLabel {
    Safe = 0,
    Unsafe = 1,
}

impl SafetyLabel {
    pub fn as_f64(self) -> f64 {
        match self {
            SafetyLabel::Safe => 0.0,
            SafetyLabel::Unsafe => 1.0,
        }
    }
}

/// Entry (`tau_sup`) and exit (`tau_auto`) thresholds, as fractions of the
/// environment's maximum action discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub tau_sup: f64,
    pub tau_auto: f64,
}

/// Thresholds in action units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteThresholds {
    pub tau_sup: f64,
    pub tau_auto: f64,
}

impl ThresholdPair {
    pub fn new(tau_sup: f64, tau_auto: f64) -> Result<Self> {
        let t = ThresholdPair { tau_sup, tau_auto };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sup >= 0.0 && self.tau_auto >= 0.0) || !self.tau_sup.is_finite() {
            return Err(Error::InvalidArgument("thresholds must be finite and >= 0".into()));
        }
        if self.tau_auto > self.tau_sup {
            return Err(Error::InvalidArgument(format!(
                "tau_auto ({}) must not exceed tau_sup ({})",
                self.tau_auto, self.tau_sup
            )));
        }
        Ok(())
    }

    pub fn to_absolute(&self, max_discrepancy: f64) -> AbsoluteThresholds {
        AbsoluteThresholds {
            tau_sup: self.tau_sup * max_discrepancy,
            tau_auto: self.tau_auto * max_discrepancy,
        }
    }
}

/// Euclidean distance between two actions.
pub fn discrepancy(a_robot: &EnvAction, a_sup: &EnvAction) -> Result<f64> {
    if a_robot.dim() != a_sup.dim() {
        return Err(Error::dims("action discrepancy", a_robot.dim(), a_sup.dim()));
    }
    Ok(crate::policy::squared_distance(a_robot, a_sup).sqrt())
}

/// `Unsafe` iff the discrepancy reaches the threshold (inclusive).
pub fn label(a_robot: &EnvAction, a_sup: &EnvAction, tau_sup: f64) -> Result<SafetyLabel> {
    Ok(label_from_discrepancy(discrepancy(a_robot, a_sup)?, tau_sup))
}

pub fn label_from_discrepancy(d: f64, tau_sup: f64) -> SafetyLabel {
    if d >= tau_sup {
        SafetyLabel::Unsafe
    } else {
        SafetyLabel::Safe
    }
}

pub fn bce_loss(prediction: f64, label: SafetyLabel) -> f64 {
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let y = label.as_f64();
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyClassifier {
    net: Mlp,
    seed: u64,
}

impl DiscrepancyClassifier {
    /// `layer_sizes` runs from the state width to a single output.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let net = Mlp::init(
            layer_sizes,
            &mut rng_for(seed, &[crate::rng::stream::CLASSIFIER_INIT]),
        )?;
        Self::from_net(net, seed)
    }

    pub fn from_net(net: Mlp, seed: u64) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::dims("classifier output", 1, net.output_dim()));
        }
        Ok(DiscrepancyClassifier { net, seed })
    }

    /// Classifier that outputs `p` everywhere (zero weights, output bias
    /// `logit(p)`, saturating at 0 and 1).
    pub fn constant(state_dim: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability out of range: {p}")));
        }
        let sizes = [state_dim, 1, 1];
        let mut params = vec![0.0; crate::nn::param_count(&sizes)];
        let logit = (p / (1.0 - p)).ln().clamp(-800.0, 800.0);
        *params.last_mut().expect("non-empty") = logit;
        Self::from_net(Mlp::from_params(&sizes, params)?, 0)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn predict(&self, state: &EnvState) -> Result<f64> {
        Ok(sigmoid(self.net.forward(state.as_slice())?[0]))
    }

    /// Mean BCE over `(state, label)` pairs plus `l2 · Σ W²`.
    pub fn loss(&self, batch: &[(&EnvState, SafetyLabel)], l2: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for (s, y) in batch {
            total += bce_loss(self.predict(s)?, *y);
        }
        Ok(total / batch.len() as f64 + l2 * self.net.weight_sq_norm())
    }

    /// Loss and exact gradient. Where the prediction is clamped the loss is
    /// flat, so those samples contribute nothing.
    pub fn gradient(&self, batch: &[(&EnvState, SafetyLabel)], l2: f64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.net.n_params()];
        let mut trace = Trace::default();
        let mut loss = 0.0;
        for (s, y) in batch {
            self.net.forward_trace(s.as_slice(), &mut trace)?;
            let p = sigmoid(trace.output()[0]);
            loss += bce_loss(p, *y) / n;
            if p > BCE_EPS && p < 1.0 - BCE_EPS {
                self.net.backward(&trace, &[(p - y.as_f64()) / n], &mut grad);
            }
        }
        loss += l2 * self.net.weight_sq_norm();
        self.net.add_l2_gradient(l2, &mut grad);
        Ok((loss, grad))
    }
}

/// Output of [`train_classifier`].
#[derive(Debug, Clone)]
pub struct ClassifierTraining {
    pub outcome: TrainOutcome<DiscrepancyClassifier>,
    /// Fraction of the training set labelled unsafe.
    pub unsafe_fraction: f64,
    /// All labels fell in one class; the classifier was trained anyway.
    pub single_class: bool,
}

/// Labels every pair with the current policy and runs minibatch BCE training.
pub fn train_classifier(
    classifier: &DiscrepancyClassifier,
    dataset: &Dataset,
    policy: &RobotPolicy,
    tau_sup: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<ClassifierTraining> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let labels = label_dataset(dataset, policy, tau_sup)?;
    train_on_labels(classifier, dataset.pairs(), &labels, config, seed)
}

pub fn label_dataset(dataset: &Dataset, policy: &RobotPolicy, tau_sup: f64) -> Result<Vec<SafetyLabel>> {
    dataset
        .iter()
        .map(|p| label(&policy.forward(&p.state)?, &p.supervisor_action, tau_sup))
        .collect()
}

/// Minibatch BCE training on precomputed labels.
pub fn train_on_labels(
    classifier: &DiscrepancyClassifier,
    pairs: &[LabeledPair],
    labels: &[SafetyLabel],
    config: &TrainConfig,
    seed: u64,
) -> Result<ClassifierTraining> {
    if pairs.len() != labels.len() {
        return Err(Error::dims("classifier labels", pairs.len(), labels.len()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let positives = labels.iter().filter(|l| **l == SafetyLabel::Unsafe).count();
    let mut rng = rng_for(seed, &[crate::rng::stream::PRETRAIN_CLASSIFIER]);
    let mut model = classifier.clone();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model.net.n_params());
    let mut loss_curve = Vec::with_capacity(config.gradient_steps_per_epoch);
    for _ in 0..config.gradient_steps_per_epoch {
        let idx = sample_batch(pairs.len(), config.batch_size, &mut rng);
        let batch: Vec<(&EnvState, SafetyLabel)> =
            idx.iter().map(|&i| (&pairs[i].state, labels[i])).collect();
        let (loss, grad) = model.gradient(&batch, config.l2_coefficient)?;
        loss_curve.push(loss);
        opt.apply(model.net.params_mut(), &grad);
    }
    Ok(ClassifierTraining {
        outcome: TrainOutcome { model, loss_curve },
        unsafe_fraction: positives as f64 / pairs.len() as f64,
        single_class: positives == 0 || positives == pairs.len(),
    })
}

/// Entry threshold chosen so that a target fraction of a dataset is unsafe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Threshold in action units.
    pub tau_sup: f64,
    /// Fraction of the dataset with discrepancy `>= tau_sup`.
    pub achieved_fraction: f64,
    pub target_fraction: f64,
    pub warnings: Vec<String>,
}

/// Picks `τ` as the `k`-th largest policy/supervisor discrepancy over the
/// dataset, `k = round(target · n)` (at least 1).
pub fn calibrate_tau_sup(policy: &RobotPolicy, dataset: &Dataset, target_fraction: f64) -> Result<Calibration> {
    let ds = dataset
        .iter()
        .map(|p| discrepancy(&policy.forward(&p.state)?, &p.supervisor_action))
        .collect::<Result<Vec<_>>>()?;
    calibrate_from_discrepancies(&ds, target_fraction)
}

pub fn calibrate_from_discrepancies(discrepancies: &[f64], target_fraction: f64) -> Result<Calibration> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target fraction must lie in (0, 1), got {target_fraction}"
        )));
    }
    if discrepancies.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = discrepancies.len();
    let mut warnings = Vec::new();
    if (n as f64) < 1.0 / target_fraction {
        warnings.push(format!(
            "dataset of {n} pairs is smaller than 1/target ({:.1}); quantile is coarse",
            1.0 / target_fraction
        ));
    }
    let mut sorted = discrepancies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((target_fraction * n as f64).round() as usize).clamp(1, n);
    let tau = sorted[k - 1];
    let at_or_above = sorted.iter().filter(|d| **d >= tau).count();
    if at_or_above > k {
        warnings.push(format!(
            "{} pairs tie at the threshold; achieved fraction exceeds target",
            at_or_above - k + 1
        ));
    }
    Ok(Calibration {
        tau_sup: tau,
        achieved_fraction: at_or_above as f64 / n as f64,
        target_fraction,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrepancy_values() {
        let a = EnvAction(vec![0.0, 0.0]);
        let b = EnvAction(vec![3.0, 4.0]);
        assert_eq!(discrepancy(&a, &a).unwrap(), 0.0);
        assert_eq!(discrepancy(&a, &b).unwrap(), 5.0);
        assert_eq!(discrepancy(&b, &a).unwrap(), 5.0);
        assert!(discrepancy(&a, &EnvAction(vec![1.0])).is_err());
    }

    #[test]
    fn label_boundary_is_inclusive() {
        assert_eq!(label_from_discrepancy(0.01, 0.005), SafetyLabel::Unsafe);
        assert_eq!(label_from_discrepancy(0.001, 0.005), SafetyLabel::Safe);
        assert_eq!(label_from_discrepancy(0.005, 0.005), SafetyLabel::Unsafe);
        let a = EnvAction(vec![0.0]);
        let b = EnvAction(vec![0.25]);
        assert_eq!(label(&a, &b, 0.25).unwrap(), SafetyLabel::Unsafe);
    }

    #[test]
    fn bce_values() {
        let ln2 = 2f64.ln();
        assert!((bce_loss(0.5, SafetyLabel::Safe) - ln2).abs() < 1e-12);
        assert!((bce_loss(0.5, SafetyLabel::Unsafe) - ln2).abs() < 1e-12);
        assert!(bce_loss(1.0 - BCE_EPS, SafetyLabel::Unsafe) < 1e-6);
        assert!((bce_loss(0.9, SafetyLabel::Safe) - 10f64.ln()).abs() < 1e-12);
        assert!(bce_loss(1.0, SafetyLabel::Safe).is_finite());
    }

    #[test]
    fn zero_classifier_predicts_half() {
        let c = DiscrepancyClassifier::from_net(Mlp::zeros(&[2, 4, 1]).unwrap(), 0).unwrap();
        assert_eq!(c.predict(&EnvState(vec![9.0, -3.0])).unwrap(), 0.5);
    }

    #[test]
    fn threshold_pair_validation() {
        assert!(ThresholdPair::new(0.1, 0.05).is_ok());
        assert!(ThresholdPair::new(0.1, 0.1).is_ok());
        assert!(ThresholdPair::new(0.1, 0.2).is_err());
        assert!(ThresholdPair::new(-0.1, -0.2).is_err());
        let abs = ThresholdPair::new(0.1, 0.05).unwrap().to_absolute(2.0);
        assert_eq!((abs.tau_sup, abs.tau_auto), (0.2, 0.1));
    }

    #[test]
    fn calibration_tenths() {
        let ds: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let c = calibrate_from_discrepancies(&ds, 0.2).unwrap();
        assert_eq!(c.tau_sup, 0.9);
        assert_eq!(c.achieved_fraction, 0.2);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn calibration_degenerate_all_equal() {
        let c = calibrate_from_discrepancies(&[0.3; 50], 0.2).unwrap();
        assert_eq!(c.tau_sup, 0.3);
        assert_eq!(c.achieved_fraction, 1.0);
        assert!(!c.warnings.is_empty());
    }

    #[test]
    fn calibration_small_dataset_warns() {
        let c = calibrate_from_discrepancies(&[0.1, 0.2, 0.3], 0.2).unwrap();
        assert_eq!(c.tau_sup, 0.3);
        assert!(!c.warnings.is_empty());
        assert!(calibrate_from_discrepancies(&[], 0.2).is_err());
        assert!(calibrate_from_discrepancies(&[0.1], 1.0).is_err());
    }
}
