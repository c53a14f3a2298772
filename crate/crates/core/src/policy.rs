//! Robot policy and behaviour cloning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{ActionBounds, EnvAction, EnvState};
use crate::nn::{sample_batch, Mlp, Optimizer, OptimizerKind, Trace};
use crate::rng::{rng_for, Rng};
use crate::{Error, Result};

/// Where a labelled pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Offline,
    Online { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub state: EnvState,
    pub supervisor_action: EnvAction,
    pub provenance: Provenance,
}

/// Append-only collection of supervisor-labelled states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pairs: Vec<LabeledPair>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: Vec<LabeledPair>) -> Self {
        Dataset { pairs }
    }

    pub fn push(&mut self, pair: LabeledPair) {
        self.pairs.push(pair);
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.pairs.extend_from_slice(&other.pairs);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledPair> {
        self.pairs.iter()
    }

    pub fn online_count(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| matches!(p.provenance, Provenance::Online { .. }))
            .count()
    }

    pub fn union(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.extend(other);
        out
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledPair;
    type IntoIter = std::slice::Iter<'a, LabeledPair>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gradient_steps_per_epoch: usize,
    pub l2_coefficient: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            gradient_steps_per_epoch: 500,
            l2_coefficient: 1e-5,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.l2_coefficient.is_nan() || self.l2_coefficient < 0.0 {
            return Err(Error::InvalidArgument("l2_coefficient must be >= 0".into()));
        }
        Ok(())
    }
}

/// Feed-forward policy whose tanh output is rescaled onto the action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPolicy {
    net: Mlp,
    bounds: ActionBounds,
    seed: u64,
}

/// Default hidden layers.
pub const POLICY_HIDDEN: [usize; 2] = [64, 64];

impl RobotPolicy {
    /// `layer_sizes` includes the input (state) and output (action) widths.
    pub fn init(layer_sizes: &[usize], bounds: ActionBounds, seed: u64) -> Result<Self> {
        let net = Mlp::init(layer_sizes, &mut rng_for(seed, &[crate::rng::stream::POLICY_INIT]))?;
        Self::from_net(net, bounds, seed)
    }

    pub fn from_net(net: Mlp, bounds: ActionBounds, seed: u64) -> Result<Self> {
        if net.output_dim() != bounds.dim() {
            return Err(Error::dims("policy output", bounds.dim(), net.output_dim()));
        }
        Ok(RobotPolicy { net, bounds, seed })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn forward(&self, state: &EnvState) -> Result<EnvAction> {
        let z = self.net.forward(state.as_slice())?;
        Ok(self.squash(&z))
    }

    fn squash(&self, z: &[f64]) -> EnvAction {
        let mid = self.bounds.midpoint();
        let half = self.bounds.half_range();
        EnvAction(
            z.iter()
                .zip(mid.iter().zip(&half))
                .map(|(z, (m, h))| (m + h * z.tanh()).clamp(m - h, m + h))
                .collect(),
        )
    }

    /// Mean squared Euclidean error against the supervisor labels plus
    /// `l2 · Σ W²`.
    pub fn bc_loss<'a, I>(&self, batch: I, l2: f64) -> Result<f64>
    where
        I: IntoIterator<Item = &'a LabeledPair>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for pair in batch {
            let a = self.forward(&pair.state)?;
            check_label(&a, &pair.supervisor_action)?;
            total += squared_distance(&a, &pair.supervisor_action);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(total / n as f64 + l2 * self.net.weight_sq_norm())
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn gradient(&self, batch: &[&LabeledPair], l2: f64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = batch.len() as f64;
        let half = self.bounds.half_range();
        let mid = self.bounds.midpoint();
        let mut grad = vec![0.0; self.net.n_params()];
        let mut trace = Trace::default();
        let mut dz = vec![0.0; half.len()];
        let mut loss = 0.0;
        for pair in batch {
            self.net.forward_trace(pair.state.as_slice(), &mut trace)?;
            check_label_dims(half.len(), &pair.supervisor_action)?;
            for (k, z) in trace.output().iter().enumerate() {
                let t = z.tanh();
                let a = mid[k] + half[k] * t;
                let r = a - pair.supervisor_action.0[k];
                loss += r * r / n;
                dz[k] = 2.0 * r / n * half[k] * (1.0 - t * t);
            }
            self.net.backward(&trace, &dz, &mut grad);
        }
        loss += l2 * self.net.weight_sq_norm();
        self.net.add_l2_gradient(l2, &mut grad);
        Ok((loss, grad))
    }
}

fn check_label(a: &EnvAction, label: &EnvAction) -> Result<()> {
    check_label_dims(a.dim(), label)
}

fn check_label_dims(dim: usize, label: &EnvAction) -> Result<()> {
    if label.dim() != dim {
        return Err(Error::dims("supervisor label", dim, label.dim()));
    }
    Ok(())
}

pub(crate) fn squared_distance(a: &EnvAction, b: &EnvAction) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of one training call.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Minibatch loss at every step, measured before the update.
    pub loss_curve: Vec<f64>,
}

/// Runs `config.gradient_steps_per_epoch` minibatch updates starting from
/// the current parameters. Minibatches are drawn with replacement.
pub fn train_bc(
    policy: &RobotPolicy,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<RobotPolicy>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = rng_for(seed, &[crate::rng::stream::PRETRAIN_POLICY]);
    let mut model = policy.clone();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model.net.n_params());
    let mut loss_curve = Vec::with_capacity(config.gradient_steps_per_epoch);
    for _ in 0..config.gradient_steps_per_epoch {
        let idx = sample_batch(dataset.len(), config.batch_size, &mut rng);
        let batch: Vec<&LabeledPair> = idx.iter().map(|&i| &dataset.pairs[i]).collect();
        let (loss, grad) = model.gradient(&batch, config.l2_coefficient)?;
        loss_curve.push(loss);
        opt.apply(model.net.params_mut(), &grad);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// Runs `epochs` back-to-back calls of [`train_bc`] with per-epoch seeds.
pub fn train_bc_epochs(
    policy: &RobotPolicy,
    dataset: &Dataset,
    config: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutcome<RobotPolicy>> {
    let mut model = policy.clone();
    let mut loss_curve = Vec::new();
    for e in 0..epochs {
        let out = train_bc(&model, dataset, config, crate::rng::derive_seed(seed, &[e as u64]))?;
        model = out.model;
        loss_curve.extend(out.loss_curve);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// Random disjoint partition with `|first| = round(fraction · n)`.
pub fn split_dataset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pairs to split, got {n}"
        )));
    }
    let k = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng: Rng = rng_for(seed, &[crate::rng::stream::SPLIT]);
    idx.shuffle(&mut rng);
    let pick = |ids: &[usize]| Dataset::from_pairs(ids.iter().map(|&i| dataset.pairs[i].clone()).collect());
    Ok((pick(&idx[..k]), pick(&idx[k..])))
}
