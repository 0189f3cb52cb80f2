//! l2-bounded projected gradient ascent on the cross-entropy loss.
//!
//! Each step moves along the normalized input gradient and projects back
//! onto the ball `{delta : |delta|_2 <= epsilon}`. The attack returns the
//! best iterate seen over all restarts (including each start), so injecting
//! a known perturbation as a start can only raise the returned loss.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{l2_norm, Graph, Tensor, Var};
use crate::predictor::{check_input, loss_and_input_grad, loss_at, Predictor};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l2 radius of the perturbation ball.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub seed: u64,
    pub restarts: usize,
    /// Box that `x + delta` is clipped into (image data). `None` for
    /// synthetic data.
    pub input_bounds: Option<(f64, f64)>,
}

pub const TRAIN_STEPS: usize = 10;
pub const EVAL_STEPS: usize = 50;
pub const TRAIN_RESTARTS: usize = 1;
pub const EVAL_RESTARTS: usize = 3;
/// Default step size is `STEP_FACTOR * epsilon / steps`.
pub const STEP_FACTOR: f64 = 2.5;

impl AttackConfig {
    fn with_defaults(epsilon: f64, steps: usize, restarts: usize, seed: u64) -> Self {
        Self {
            epsilon,
            steps,
            step_size: STEP_FACTOR * epsilon / steps as f64,
            random_start: true,
            seed,
            restarts,
            input_bounds: None,
        }
    }

    /// 10 steps, one restart.
    pub fn training(epsilon: f64, seed: u64) -> Self {
        Self::with_defaults(epsilon, TRAIN_STEPS, TRAIN_RESTARTS, seed)
    }

    /// 50 steps, three restarts.
    pub fn evaluation(epsilon: f64, seed: u64) -> Self {
        Self::with_defaults(epsilon, EVAL_STEPS, EVAL_RESTARTS, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::Validation("steps and restarts must be >= 1".into()));
        }
        if self.epsilon > 0.0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Validation(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if let Some((lo, hi)) = self.input_bounds {
            if !(lo < hi) {
                return Err(Error::Validation(format!("empty input box [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Same schedule at another radius. The ratio `step_size / epsilon` is
    /// kept; from a zero radius the default ratio applies.
    pub fn at_radius(&self, epsilon: f64) -> Self {
        let ratio = if self.epsilon > 0.0 {
            self.step_size / self.epsilon
        } else {
            STEP_FACTOR / self.steps as f64
        };
        Self {
            epsilon,
            step_size: ratio * epsilon,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Stable identifier of the schedule, used to label reports.
    pub fn id(&self) -> String {
        let ratio = if self.epsilon > 0.0 {
            self.step_size / self.epsilon
        } else {
            STEP_FACTOR / self.steps as f64
        };
        format!(
            "pgd-l2-s{}-r{}-k{:.6}-{}-seed{}",
            self.steps,
            self.restarts,
            ratio,
            if self.random_start { "rand" } else { "zero" },
            self.seed
        )
    }
}

/// Projection onto the l2 ball of radius `epsilon`.
pub fn project_l2(delta: &Tensor, epsilon: f64) -> Tensor {
    let mut out = delta.clone().with_requires_grad(false);
    project_in_place(out.data_mut(), epsilon);
    out
}

pub(crate) fn project_in_place(delta: &mut [f64], epsilon: f64) {
    let norm = l2_norm(delta);
    if norm > epsilon {
        let scale = epsilon / norm;
        delta.iter_mut().for_each(|d| *d *= scale);
        // Rounding in the rescale can leave the norm a few ulps outside.
        let after = l2_norm(delta);
        if after > epsilon {
            let shrink = epsilon / after;
            delta.iter_mut().for_each(|d| *d *= shrink);
        }
    }
}

/// Uniform sample from the ball: Gaussian direction, radius `eps * U^(1/d)`.
pub fn random_in_ball<R: Rng>(rng: &mut R, dim: usize, epsilon: f64) -> Vec<f64> {
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = l2_norm(&dir);
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    let u: f64 = rng.random();
    let radius = epsilon * u.powf(1.0 / dim as f64);
    dir.iter_mut().for_each(|d| *d *= radius / norm);
    project_in_place(&mut dir, epsilon);
    dir
}

/// Result of [`pgd_attack_with_starts`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub delta: Vec<f64>,
    /// Cross-entropy at `x + delta`.
    pub loss: f64,
}

/// PGD with `cfg.restarts` independently seeded restarts.
pub fn pgd_attack<P: Predictor + ?Sized>(
    predictor: &P,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    Ok(pgd_attack_with_starts(predictor, x, label, cfg, &[])?.delta)
}

/// PGD where each perturbation in `starts` (projected onto the ball) runs as
/// an extra restart ahead of the seeded ones.
pub fn pgd_attack_with_starts<P: Predictor + ?Sized>(
    predictor: &P,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
    starts: &[Vec<f64>],
) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_input(predictor.input_dim(), x.len())?;
    if label >= predictor.num_classes() {
        return Err(Error::Index {
            index: label,
            len: predictor.num_classes(),
        });
    }
    let dim = x.len();
    if cfg.epsilon == 0.0 {
        let delta = vec![0.0; dim];
        let loss = loss_at(predictor, &apply(x, &delta, cfg.input_bounds), label)?;
        return Ok(AttackOutcome { delta, loss });
    }

    let mut best: Option<AttackOutcome> = None;
    let injected = starts.iter().map(|s| {
        let mut s = s.clone();
        project_in_place(&mut s, cfg.epsilon);
        s
    });
    let seeded = (0..cfg.restarts).map(|r| {
        if cfg.random_start {
            random_in_ball(&mut seed::rng(seed::split(cfg.seed, r as u64 + 1)), dim, cfg.epsilon)
        } else {
            vec![0.0; dim]
        }
    });
    for start in injected.chain(seeded) {
        if start.len() != dim {
            return Err(Error::dim("pgd_attack", "start perturbation has the wrong length"));
        }
        let outcome = ascend(predictor, x, label, cfg, start)?;
        if best.as_ref().is_none_or(|b| outcome.loss > b.loss) {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn apply(x: &[f64], delta: &[f64], bounds: Option<(f64, f64)>) -> Vec<f64> {
    x.iter()
        .zip(delta)
        .map(|(a, d)| match bounds {
            Some((lo, hi)) => (a + d).clamp(lo, hi),
            None => a + d,
        })
        .collect()
}

/// Replaces `delta` by the effective perturbation after clipping `x + delta`.
fn clip_delta(x: &[f64], delta: &mut [f64], bounds: Option<(f64, f64)>) {
    if let Some((lo, hi)) = bounds {
        for (d, a) in delta.iter_mut().zip(x) {
            *d = (a + *d).clamp(lo, hi) - a;
        }
    }
}

fn ascend<P: Predictor + ?Sized>(
    predictor: &P,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
    mut delta: Vec<f64>,
) -> Result<AttackOutcome> {
    clip_delta(x, &mut delta, cfg.input_bounds);
    let mut best = AttackOutcome {
        delta: Vec::new(),
        loss: f64::NEG_INFINITY,
    };
    for step in 0..=cfg.steps {
        let xa = apply(x, &delta, cfg.input_bounds);
        let (loss, grad) = if step < cfg.steps {
            loss_and_input_grad(predictor, &xa, label)?
        } else {
            (loss_at(predictor, &xa, label)?, Vec::new())
        };
        if !loss.is_finite() {
            return Err(Error::Numeric { step, value: loss });
        }
        if loss > best.loss {
            best = AttackOutcome {
                delta: delta.clone(),
                loss,
            };
        }
        if step == cfg.steps {
            break;
        }
        let gnorm = l2_norm(&grad);
        if gnorm == 0.0 || !gnorm.is_finite() {
            continue;
        }
        let scale = cfg.step_size / gnorm;
        delta.iter_mut().zip(&grad).for_each(|(d, g)| *d += scale * g);
        project_in_place(&mut delta, cfg.epsilon);
        clip_delta(x, &mut delta, cfg.input_bounds);
    }
    Ok(best)
}

/// Two-class linear model with logits `[w.x + b, 0]`. Class 0 is favoured
/// by increasing `w.x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBinary {
    weight: Tensor,
    bias: Tensor,
    w: Vec<f64>,
    b: f64,
}

impl LinearBinary {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        let d = w.len();
        let mut rows = w.clone();
        rows.extend(std::iter::repeat_n(0.0, d));
        Self {
            weight: Tensor::new(vec![2, d], rows).expect("2 x d"),
            bias: Tensor::vector(vec![b, 0.0]),
            w,
            b,
        }
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Signed distance-scaled margin `s * (w.x + b)`, positive iff `label`
    /// is predicted (ties go to class 0).
    pub fn margin(&self, x: &[f64], label: usize) -> f64 {
        let z: f64 = self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b;
        if label == 0 {
            z
        } else {
            -z
        }
    }
}

impl Predictor for LinearBinary {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let w = graph.constant(self.weight.clone());
        let b = graph.constant(self.bias.clone());
        let z = graph.matmul(w, x)?;
        graph.add(z, b)
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self.w.len(), x.len())?;
        Ok(crate::autodiff::affine(self.weight.data(), self.w.len(), x, Some(self.bias.data())))
    }
}

/// Exact maximizer of the cross-entropy of [`LinearBinary`] over the
/// `epsilon` ball: move against the label's margin along `w`.
pub fn worst_case_linear(w: &[f64], _b: f64, x: &[f64], label: usize, epsilon: f64) -> Result<Vec<f64>> {
    if w.len() != x.len() {
        return Err(Error::dim("worst_case_linear", format!("w has {} entries, x has {}", w.len(), x.len())));
    }
    if label > 1 {
        return Err(Error::Index { index: label, len: 2 });
    }
    let norm = l2_norm(w);
    if norm == 0.0 {
        return Err(Error::contract("worst_case_linear needs a non-zero weight vector"));
    }
    let sign = if label == 0 { 1.0 } else { -1.0 };
    Ok(w.iter().map(|wi| -epsilon * sign * wi / norm).collect())
}
