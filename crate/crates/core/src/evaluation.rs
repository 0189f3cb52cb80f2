//! Accuracy and loss under PGD attack across perturbation radii.
//!
//! Example `i` is always attacked with seed `split(cfg.seed, i)`, so points
//! of a curve are comparable and every number is reproducible. Examples run
//! in parallel and are reduced in dataset order.

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{pgd_attack_with_starts, AttackConfig};
use crate::autodiff::{argmax, cross_entropy};
use crate::data::Dataset;
use crate::ensemble::uniform_ensemble;
use crate::models::{Architecture, ModelParams};
use crate::predictor::Predictor;
use crate::training::{train_ensemble_members, TrainConfig};
use crate::{seed, Error, Result};

/// Outcome of attacking one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub correct: bool,
    pub loss: f64,
    pub delta: Vec<f64>,
}

/// All examples attacked at one radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEval {
    pub epsilon: f64,
    pub examples: Vec<ExampleOutcome>,
}

impl PointEval {
    pub fn correct(&self) -> usize {
        self.examples.iter().filter(|e| e.correct).count()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.examples.len() as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.examples.iter().map(|e| e.loss).sum::<f64>() / self.examples.len() as f64
    }
}

fn example_seed(cfg: &AttackConfig, index: usize) -> u64 {
    seed::split(cfg.seed, index as u64)
}

/// Attacks every example at radius `epsilon` using `cfg`'s schedule.
/// `starts[i]`, when given, is injected as an extra restart for example `i`.
pub fn evaluate_at<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    epsilon: f64,
    cfg: &AttackConfig,
    starts: Option<&[Vec<f64>]>,
) -> Result<PointEval> {
    data.require_nonempty("evaluation")?;
    let cfg = cfg.at_radius(epsilon);
    cfg.validate()?;
    let examples = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (&data.inputs[i], data.labels[i]);
            if epsilon == 0.0 {
                let z = predictor.logits(x)?;
                return Ok(ExampleOutcome {
                    correct: argmax(&z) == y,
                    loss: cross_entropy(&z, y)?,
                    delta: vec![0.0; x.len()],
                });
            }
            let injected = starts.map(|s| std::slice::from_ref(&s[i])).unwrap_or(&[]);
            let out = pgd_attack_with_starts(predictor, x, y, &cfg.with_seed(example_seed(&cfg, i)), injected)?;
            let xa: Vec<f64> = x.iter().zip(&out.delta).map(|(a, d)| a + d).collect();
            let z = predictor.logits(&xa)?;
            Ok(ExampleOutcome {
                correct: argmax(&z) == y,
                loss: out.loss,
                delta: out.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointEval { epsilon, examples })
}

pub fn natural_accuracy<P: Predictor + ?Sized>(predictor: &P, data: &Dataset) -> Result<f64> {
    Ok(evaluate_at(predictor, data, 0.0, &AttackConfig::evaluation(0.0, 0), None)?.accuracy())
}

/// Fraction of examples still classified correctly under PGD at `epsilon`.
pub fn adversarial_accuracy<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    epsilon: f64,
    cfg: &AttackConfig,
) -> Result<f64> {
    Ok(evaluate_at(predictor, data, epsilon, cfg, None)?.accuracy())
}

/// Mean cross-entropy at the PGD perturbation found at `epsilon`.
pub fn adversarial_loss<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    epsilon: f64,
    cfg: &AttackConfig,
) -> Result<f64> {
    Ok(evaluate_at(predictor, data, epsilon, cfg, None)?.mean_loss())
}

/// Mean adversarial accuracy of independently attacked models sharing one
/// training radius. Summed as integer counts, so member order is irrelevant.
pub fn mean_over_inits(
    models: &[ModelParams],
    data: &Dataset,
    epsilon: f64,
    cfg: &AttackConfig,
) -> Result<f64> {
    let Some(first) = models.first() else {
        return Err(Error::contract("mean_over_inits needs at least one model"));
    };
    if let Some(m) = models.iter().find(|m| m.train_eps.to_bits() != first.train_eps.to_bits()) {
        return Err(Error::contract(format!(
            "models mix training radii {} and {}",
            first.train_eps, m.train_eps
        )));
    }
    let mut correct = 0usize;
    for m in models {
        correct += evaluate_at(m, data, epsilon, cfg, None)?.correct();
    }
    Ok(correct as f64 / (models.len() * data.len()) as f64)
}

/// Sampled map from radius to adversarial accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyCurve {
    points: Vec<(f64, f64)>,
    pub attack_cfg_id: String,
}

impl AccuracyCurve {
    pub fn new(points: Vec<(f64, f64)>, attack_cfg_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("empty curve".into()));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Validation("curve radii must be strictly increasing".into()));
        }
        if points.iter().any(|&(e, a)| !(e >= 0.0) || !(0.0..=1.0).contains(&a)) {
            return Err(Error::Validation("curve point outside eps >= 0, acc in [0, 1]".into()));
        }
        Ok(Self {
            points,
            attack_cfg_id: attack_cfg_id.into(),
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_auc_ready(&self) -> bool {
        self.points[0].0 == 0.0
    }
}

/// How successive radii of a sweep are attacked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Each radius is attacked from scratch.
    Independent,
    /// The perturbation found at the previous radius is injected as an extra
    /// restart, which makes per-example loss non-decreasing in the radius.
    #[default]
    Nested,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::contract("empty radius grid"));
    }
    if grid[0] != 0.0 {
        return Err(Error::contract(format!("radius grid must start at 0, starts at {}", grid[0])));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::contract("radius grid must be strictly increasing"));
    }
    Ok(())
}

/// Attacks every example at every radius of `grid`.
pub fn sweep<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    grid: &[f64],
    cfg: &AttackConfig,
    mode: SweepMode,
) -> Result<Vec<PointEval>> {
    check_grid(grid)?;
    let mut out: Vec<PointEval> = Vec::with_capacity(grid.len());
    for &eps in grid {
        let starts: Option<Vec<Vec<f64>>> = match (mode, out.last()) {
            (SweepMode::Nested, Some(prev)) => Some(prev.examples.iter().map(|e| e.delta.clone()).collect()),
            _ => None,
        };
        out.push(evaluate_at(predictor, data, eps, cfg, starts.as_deref())?);
    }
    Ok(out)
}

/// Adversarial accuracy over `grid` (strictly increasing, starting at 0),
/// with nested restarts.
pub fn accuracy_curve<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    grid: &[f64],
    cfg: &AttackConfig,
) -> Result<AccuracyCurve> {
    let points = sweep(predictor, data, grid, cfg, SweepMode::Nested)?;
    AccuracyCurve::new(
        points.iter().map(|p| (p.epsilon, p.accuracy())).collect(),
        cfg.id(),
    )
}

/// `n` evenly spaced radii on `[0, eps_target]`, endpoints included.
pub fn default_grid(eps_target: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| eps_target * i as f64 / (n - 1) as f64).collect()
}

pub const DEFAULT_GRID_POINTS: usize = 11;

/// Mean of the curve over `[0, eps_target]` by the trapezoid rule, with
/// linear interpolation at `eps_target` when it falls between points.
pub fn auc(curve: &AccuracyCurve, eps_target: f64) -> Result<f64> {
    if !(eps_target > 0.0) {
        return Err(Error::contract(format!("AUC target must be positive, got {eps_target}")));
    }
    let pts = curve.points();
    if !curve.is_auc_ready() || pts.last().expect("non-empty").0 < eps_target {
        return Err(Error::contract(format!(
            "curve spans [{}, {}], does not cover [0, {eps_target}]",
            pts[0].0,
            pts.last().expect("non-empty").0
        )));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((e0, a0), (e1, a1)) = (w[0], w[1]);
        if e0 >= eps_target {
            break;
        }
        let (end, a_end) = if e1 <= eps_target {
            (e1, a1)
        } else {
            (eps_target, a0 + (a1 - a0) * (eps_target - e0) / (e1 - e0))
        };
        area += 0.5 * (a0 + a_end) * (end - e0);
    }
    Ok((area / eps_target).clamp(0.0, 1.0))
}

/// One evaluated model: natural accuracy, adversarial accuracy and loss per
/// radius, and the AUC over the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model_id: String,
    pub natural_acc: f64,
    /// `(epsilon, accuracy, loss)`, grid order.
    pub adversarial: Vec<(f64, f64, f64)>,
    pub auc: Option<f64>,
    pub auc_target: f64,
    pub sample_count: usize,
    pub attack_cfg_id: String,
    pub seeds: Vec<u64>,
}

/// Runs a nested sweep and summarizes it. `auc` is computed over
/// `[0, eps_target]` when the grid covers it.
pub fn evaluate_report<P: Predictor + ?Sized>(
    model_id: impl Into<String>,
    predictor: &P,
    data: &Dataset,
    grid: &[f64],
    eps_target: f64,
    cfg: &AttackConfig,
    seeds: Vec<u64>,
) -> Result<EvalReport> {
    let points = sweep(predictor, data, grid, cfg, SweepMode::Nested)?;
    let curve = AccuracyCurve::new(points.iter().map(|p| (p.epsilon, p.accuracy())).collect(), cfg.id())?;
    let covers = eps_target > 0.0 && grid.last().is_some_and(|&e| e >= eps_target);
    Ok(EvalReport {
        model_id: model_id.into(),
        natural_acc: points[0].accuracy(),
        adversarial: points.iter().map(|p| (p.epsilon, p.accuracy(), p.mean_loss())).collect(),
        auc: if covers { Some(auc(&curve, eps_target)?) } else { None },
        auc_target: eps_target,
        sample_count: data.len(),
        attack_cfg_id: cfg.id(),
        seeds,
    })
}

/// One candidate training radius of [`min_alpha_search`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub natural_acc: f64,
    pub adversarial_acc: f64,
    /// `adversarial_acc - reference adversarial accuracy`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSearchResult {
    pub alpha_star: f64,
    /// False when no radius matched the reference; `alpha_star` then
    /// maximizes the margin.
    pub feasible: bool,
    pub reference_natural_acc: f64,
    pub reference_adversarial_acc: f64,
    pub rows: Vec<AlphaRow>,
    #[serde(skip)]
    pub selected_members: Vec<ModelParams>,
}

/// Inputs of [`min_alpha_search`].
#[derive(Debug, Clone)]
pub struct AlphaSearch<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub arch: &'a Architecture,
    pub k: usize,
    pub eps_target: f64,
    pub alpha_grid: &'a [f64],
    pub train_cfg: &'a TrainConfig,
    pub attack_cfg: &'a AttackConfig,
    pub base_seed: u64,
}

/// Smallest training radius whose uniform `k`-ensemble matches `reference`
/// (a single model trained at `eps_target`) in validation adversarial
/// accuracy at `eps_target`.
pub fn min_alpha_search(search: &AlphaSearch<'_>, reference: &ModelParams) -> Result<AlphaSearchResult> {
    let grid = search.alpha_grid;
    if grid.is_empty() {
        return Err(Error::contract("alpha grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::contract("alpha grid must be strictly increasing"));
    }
    if grid.iter().any(|&a| !(a > 0.0 && a <= search.eps_target)) {
        return Err(Error::contract(format!(
            "alpha grid must lie in (0, {}]",
            search.eps_target
        )));
    }
    let ref_nat = natural_accuracy(reference, search.val)?;
    let ref_adv = adversarial_accuracy(reference, search.val, search.eps_target, search.attack_cfg)?;

    let mut rows = Vec::with_capacity(grid.len());
    let mut chosen: Option<(usize, Vec<ModelParams>)> = None;
    let mut best_margin: Option<(usize, f64, Vec<ModelParams>)> = None;
    for (i, &alpha) in grid.iter().enumerate() {
        let members = train_ensemble_members(
            search.train,
            search.arch,
            &search.train_cfg.with_alpha(alpha),
            search.base_seed,
            search.k,
        )?;
        let ens = uniform_ensemble(members.clone())?;
        let nat = natural_accuracy(&ens, search.val)?;
        let adv = adversarial_accuracy(&ens, search.val, search.eps_target, search.attack_cfg)?;
        let margin = adv - ref_adv;
        rows.push(AlphaRow {
            alpha,
            natural_acc: nat,
            adversarial_acc: adv,
            margin,
        });
        if margin >= 0.0 && chosen.is_none() {
            chosen = Some((i, members.clone()));
        }
        if best_margin.as_ref().is_none_or(|(_, m, _)| margin > *m) {
            best_margin = Some((i, margin, members));
        }
    }
    let (feasible, (idx, members)) = match chosen {
        Some(c) => (true, c),
        None => {
            let (i, _, m) = best_margin.expect("non-empty grid");
            (false, (i, m))
        }
    };
    Ok(AlphaSearchResult {
        alpha_star: grid[idx],
        feasible,
        reference_natural_acc: ref_nat,
        reference_adversarial_acc: ref_adv,
        rows,
        selected_members: members,
    })
}

/// One family member of [`equivalence_epsilon`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub epsilon: f64,
    /// Family model trained at `epsilon`, attacked at `epsilon`.
    pub single_acc: f64,
    /// Ensemble attacked at `epsilon`.
    pub ensemble_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceResult {
    /// `None` when the ensemble falls short of the family at every radius.
    pub eps_eq: Option<f64>,
    pub rows: Vec<EquivalenceRow>,
}

/// Largest radius at which the ensemble's adversarial accuracy matches a
/// single model trained (and attacked) at that radius, interpolating
/// linearly to the crossing after the last matching grid point.
pub fn equivalence_epsilon<P: Predictor + ?Sized>(
    ensemble: &P,
    family: &[ModelParams],
    data: &Dataset,
    cfg: &AttackConfig,
) -> Result<EquivalenceResult> {
    if family.is_empty() {
        return Err(Error::contract("equivalence needs a non-empty model family"));
    }
    if family.windows(2).any(|w| !(w[0].train_eps < w[1].train_eps)) {
        return Err(Error::contract("family must be sorted by strictly increasing train_eps"));
    }
    let mut rows = Vec::with_capacity(family.len());
    for m in family {
        let eps = m.train_eps;
        rows.push(EquivalenceRow {
            epsilon: eps,
            single_acc: adversarial_accuracy(m, data, eps, cfg)?,
            ensemble_acc: adversarial_accuracy(ensemble, data, eps, cfg)?,
        });
    }
    Ok(EquivalenceResult {
        eps_eq: crossing(&rows),
        rows,
    })
}

fn crossing(rows: &[EquivalenceRow]) -> Option<f64> {
    let gap = |r: &EquivalenceRow| r.ensemble_acc - r.single_acc;
    let last_ok = rows.iter().rposition(|r| gap(r) >= 0.0)?;
    let Some(next) = rows.get(last_ok + 1) else {
        return Some(rows[last_ok].epsilon);
    };
    let (d0, d1) = (gap(&rows[last_ok]), gap(next));
    let (e0, e1) = (rows[last_ok].epsilon, next.epsilon);
    Some(e0 + (e1 - e0) * d0 / (d0 - d1))
}
