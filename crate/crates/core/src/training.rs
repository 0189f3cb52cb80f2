//! Minibatch SGD training, optionally adversarial.
//!
//! With a positive training radius every example in a batch is first
//! replaced by its PGD perturbation against the current parameters, then
//! the batch-mean cross-entropy is descended. Per-example work runs in
//! parallel; gradients are reduced in batch order, so results do not
//! depend on scheduling.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::attacks::{pgd_attack, AttackConfig};
use crate::autodiff::{Graph, Sgd, Tensor, Var, Velocity};
use crate::data::Dataset;
use crate::models::{init_model, Architecture, CompositeModel, ModelParams};
use crate::predictor::{loss_at, Predictor};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Its `epsilon` is the training radius; 0 means standard training.
    pub train_attack: AttackConfig,
    /// Seeds the per-epoch shuffles.
    pub data_seed: u64,
    /// Print `epoch=<i> nat_loss=<f> adv_loss=<f>` to stderr after each epoch.
    pub report_progress: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            train_attack: AttackConfig::training(0.0, 0),
            data_seed: 0,
            report_progress: false,
        }
    }
}

impl TrainConfig {
    /// Same config with the training radius set to `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            train_attack: self.train_attack.at_radius(alpha),
            ..self.clone()
        }
    }

    pub fn alpha(&self) -> f64 {
        self.train_attack.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        Sgd::new(self.lr, self.momentum)?;
        self.train_attack.validate()
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub nat_loss: f64,
    pub adv_loss: f64,
}

/// A predictor with a distinguished set of trainable tensors.
pub trait Trainable: Predictor + Clone + Send {
    fn trainable(&self) -> &[Tensor];

    fn trainable_mut(&mut self) -> &mut [Tensor];

    /// Records the logits with the trainable tensors bound to `params`.
    fn record_trainable(&self, graph: &mut Graph, params: &[Var], x: Var) -> Result<Var>;
}

impl Trainable for ModelParams {
    fn trainable(&self) -> &[Tensor] {
        self.params()
    }

    fn trainable_mut(&mut self) -> &mut [Tensor] {
        self.params_mut()
    }

    fn record_trainable(&self, graph: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        self.record_with(graph, params, x)
    }
}

impl Trainable for CompositeModel {
    fn trainable(&self) -> &[Tensor] {
        self.head()
    }

    fn trainable_mut(&mut self) -> &mut [Tensor] {
        self.head_mut()
    }

    fn record_trainable(&self, graph: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        self.record_with_head(graph, params, x)
    }
}

struct ExampleStep {
    grads: Vec<Tensor>,
    nat_loss: f64,
    adv_loss: f64,
}

fn example_step<M: Trainable>(
    model: &M,
    x: &[f64],
    label: usize,
    attack: Option<AttackConfig>,
) -> Result<ExampleStep> {
    let (xa, nat_loss) = match attack {
        Some(cfg) => {
            let delta = pgd_attack(model, x, label, &cfg)?;
            let xa: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let xa = match cfg.input_bounds {
                Some((lo, hi)) => xa.into_iter().map(|v| v.clamp(lo, hi)).collect(),
                None => xa,
            };
            (xa, Some(loss_at(model, x, label)?))
        }
        None => (x.to_vec(), None),
    };
    let mut g = Graph::new();
    let params: Vec<Var> = model.trainable().iter().map(|p| g.param(p.clone())).collect();
    let xv = g.constant(Tensor::vector(xa));
    let logits = model.record_trainable(&mut g, &params, xv)?;
    let loss = g.cross_entropy(logits, label)?;
    let mut grads = g.backward(loss)?;
    let adv_loss = g.value(loss).item();
    Ok(ExampleStep {
        grads: params
            .iter()
            .map(|&p| grads.take(p).expect("bound as parameter"))
            .collect(),
        nat_loss: nat_loss.unwrap_or(adv_loss),
        adv_loss,
    })
}

/// Trains `model.trainable()` in place and returns per-epoch mean losses.
pub fn fit<M: Trainable + Sync>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    data.require_nonempty("training")?;
    cfg.validate()?;
    let sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut velocity = Velocity::default();
    let adversarial = cfg.train_attack.epsilon > 0.0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng(seed::split(cfg.data_seed, epoch as u64 + 1)));
        let attack_seed = seed::split(cfg.train_attack.seed, epoch as u64 + 1);
        let (mut nat_total, mut adv_total) = (0.0, 0.0);

        for batch in order.chunks(cfg.batch_size) {
            let snapshot = model.clone();
            let steps: Vec<ExampleStep> = batch
                .par_iter()
                .map(|&i| {
                    let attack = adversarial
                        .then(|| cfg.train_attack.with_seed(seed::split(attack_seed, i as u64)));
                    example_step(&snapshot, &data.inputs[i], data.labels[i], attack)
                })
                .collect::<Result<_>>()?;

            let inv = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = snapshot
                .trainable()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect();
            for step in &steps {
                for (acc, g) in grads.iter_mut().zip(&step.grads) {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
                nat_total += step.nat_loss;
                adv_total += step.adv_loss;
            }
            grads
                .iter_mut()
                .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            sgd.step(model.trainable_mut(), &grads, &mut velocity)?;
        }

        let stats = EpochStats {
            epoch,
            nat_loss: nat_total / data.len() as f64,
            adv_loss: adv_total / data.len() as f64,
        };
        if cfg.report_progress {
            eprintln!(
                "epoch={} nat_loss={:.6} adv_loss={:.6}",
                stats.epoch, stats.nat_loss, stats.adv_loss
            );
        }
        history.push(stats);
    }
    Ok(history)
}

/// Natural training from `init_model(arch, omega)`.
pub fn train_standard(data: &Dataset, arch: &Architecture, cfg: &TrainConfig, omega: u64) -> Result<ModelParams> {
    if cfg.alpha() != 0.0 {
        return Err(Error::Validation(format!(
            "standard training needs a zero training radius, got {}",
            cfg.alpha()
        )));
    }
    check_arch(data, arch)?;
    let mut model = init_model(arch, omega);
    fit(&mut model, data, cfg)?;
    Ok(model.with_train_eps(0.0))
}

/// Adversarial training at radius `cfg.alpha() > 0`.
pub fn train_robust(data: &Dataset, arch: &Architecture, cfg: &TrainConfig, omega: u64) -> Result<ModelParams> {
    let alpha = cfg.alpha();
    if !(alpha > 0.0) {
        return Err(Error::Validation(format!(
            "robust training needs a positive radius, got {alpha}"
        )));
    }
    check_arch(data, arch)?;
    let mut model = init_model(arch, omega);
    fit(&mut model, data, cfg)?;
    Ok(model.with_train_eps(alpha))
}

/// Standard or robust training depending on the radius.
pub fn train_at(data: &Dataset, arch: &Architecture, cfg: &TrainConfig, omega: u64) -> Result<ModelParams> {
    if cfg.alpha() > 0.0 {
        train_robust(data, arch, cfg, omega)
    } else {
        train_standard(data, arch, cfg, omega)
    }
}

fn check_arch(data: &Dataset, arch: &Architecture) -> Result<()> {
    arch.validate()?;
    data.require_nonempty("training")?;
    if data.dim() != arch.input_dim || data.num_classes != arch.num_classes {
        return Err(Error::dim(
            "train",
            format!(
                "data is {}-dimensional with {} classes, architecture expects {} and {}",
                data.dim(),
                data.num_classes,
                arch.input_dim,
                arch.num_classes
            ),
        ));
    }
    Ok(())
}

/// Adversarially trains only the head of `composite`; the attack
/// differentiates through both frozen backbones.
pub fn train_composite_head(
    composite: &CompositeModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<CompositeModel> {
    let eps = cfg.alpha();
    if !(eps > 0.0) {
        return Err(Error::Validation(format!(
            "composite head training needs a positive radius, got {eps}"
        )));
    }
    let mut trained = composite.clone();
    fit(&mut trained, data, cfg)?;
    trained.head_eps = eps;
    Ok(trained)
}

/// Seed of ensemble member `j` (1-based).
pub fn member_seed(base_seed: u64, j: usize) -> u64 {
    seed::split(base_seed, j as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

/// `k` robust members with seeds `member_seed(base_seed, 1..=k)`, trained in
/// parallel.
pub fn train_ensemble_members(
    data: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    base_seed: u64,
    k: usize,
) -> Result<Vec<ModelParams>> {
    train_ensemble_members_with(data, arch, cfg, base_seed, k, Execution::Parallel)
}

pub fn train_ensemble_members_with(
    data: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    base_seed: u64,
    k: usize,
    execution: Execution,
) -> Result<Vec<ModelParams>> {
    if k == 0 {
        return Err(Error::Validation("ensemble needs K >= 1".into()));
    }
    let train = |j: usize| train_robust(data, arch, cfg, member_seed(base_seed, j));
    match execution {
        Execution::Parallel => (1..=k).into_par_iter().map(train).collect(),
        Execution::Sequential => (1..=k).map(train).collect(),
    }
}
