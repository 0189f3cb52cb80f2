//! Randomized checks shared by the module suites and the acceptance target.
//! Each returns raw counts or extremes; callers decide what passes.

use super::*;
use rand::Rng;
use rand_distr::StandardNormal;
use robens::attacks::{pgd_attack, worst_case_linear, AttackConfig, LinearBinary};
use robens::autodiff::cross_entropy;
use robens::data::{gen_two_gaussians, Dataset};
use robens::ensemble::{validate_simplex, EnsemblePredictor};
use robens::evaluation::{auc, sweep, AccuracyCurve, SweepMode};
use robens::models::{Architecture, ModelParams};
use robens::predictor::{loss_at, Predictor};
use robens::training::{train_standard, TrainConfig};

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn add(x: &[f64], d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + b).collect()
}

fn gaussian_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Point uniform on the sphere of radius `eps`.
fn on_sphere(r: &mut ChaCha8Rng, n: usize, eps: f64) -> Vec<f64> {
    let v = gaussian_vec(r, n);
    let norm = l2(&v);
    v.iter().map(|a| a * eps / norm).collect()
}

/// Random Dirichlet(1) weights.
fn simplex(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -r.random_range(f64::EPSILON..1.0).ln()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

pub struct Feasibility {
    pub cases: usize,
    pub violations: usize,
    /// Largest `||delta|| / eps` seen.
    pub worst_ratio: f64,
}

/// Random attacks on random models, some with input clipping.
pub fn pgd_feasibility(cases: usize) -> Feasibility {
    let mut out = Feasibility {
        cases,
        violations: 0,
        worst_ratio: 0.0,
    };
    for s in 0..cases as u64 {
        let mut r = rng(seed::split(0xFEA5, s));
        let (d, c) = (r.random_range(1..12), r.random_range(2..5));
        let model = small_model(s, d, vec![r.random_range(2..10)], c);
        let eps = r.random_range(1e-3..3.0);
        let x = uniform_vec(&mut r, d, 0.0, 1.0);
        let cfg = AttackConfig {
            epsilon: eps,
            steps: r.random_range(1..12),
            step_size: eps * r.random_range(0.01..5.0),
            random_start: r.random(),
            seed: s,
            restarts: r.random_range(1..4),
            input_bounds: if r.random() { Some((0.0, 1.0)) } else { None },
        };
        let delta = pgd_attack(&model, &x, r.random_range(0..c), &cfg).unwrap();
        let ratio = l2(&delta) / eps;
        out.worst_ratio = out.worst_ratio.max(ratio);
        if l2(&delta) > eps * (1.0 + 1e-12) {
            out.violations += 1;
        }
    }
    out
}

/// Smallest ratio, over random binary linear problems, of the loss increase
/// 50-step PGD achieves to the closed-form maximum.
///
/// From a random start the iterate approaches the optimal direction along
/// the sphere only geometrically (angle shrinks by about `1 / (1 + step/eps)`
/// per step), so random starts can stop short of 99%; from zero the gradient
/// points straight at the optimum.
pub fn linear_oracle_ratio(cases: usize, random_start: bool) -> f64 {
    let mut worst = f64::INFINITY;
    for s in 0..cases as u64 {
        let mut r = rng(seed::split(0x11AE, s));
        let d = r.random_range(1..20);
        let norm = r.random_range(0.5..2.0);
        let w = on_sphere(&mut r, d, norm);
        let x = gaussian_vec(&mut r, d);
        // Keep the clean margin moderate so the loss is not saturated.
        let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let b = r.random_range(-2.0..2.0) - z;
        let lin = LinearBinary::new(w.clone(), b);
        let label = r.random_range(0..2);
        let eps = r.random_range(0.05..2.0);
        let clean = loss_at(&lin, &x, label).unwrap();
        let star = worst_case_linear(&w, b, &x, label, eps).unwrap();
        let best = loss_at(&lin, &add(&x, &star), label).unwrap() - clean;
        let cfg = AttackConfig {
            random_start,
            ..AttackConfig::evaluation(eps, s)
        };
        let pgd = pgd_attack(&lin, &x, label, &cfg).unwrap();
        let got = loss_at(&lin, &add(&x, &pgd), label).unwrap() - clean;
        worst = worst.min(got / best);
    }
    worst
}

pub struct Jensen {
    pub cases: usize,
    pub violations: usize,
    /// Largest `ensemble loss - weighted member loss` seen.
    pub worst_gap: f64,
}

/// Ensemble loss at a random perturbation against the weighted member
/// losses, for random members and weights.
pub fn jensen_bound(cases: usize) -> Jensen {
    let mut out = Jensen {
        cases,
        violations: 0,
        worst_gap: f64::NEG_INFINITY,
    };
    for s in 0..cases as u64 {
        let mut r = rng(seed::split(0x1E25, s));
        let k = [2, 4, 8][s as usize % 3];
        let (d, c) = (r.random_range(1..8), r.random_range(2..6));
        let members: Vec<ModelParams> = (0..k)
            .map(|j| {
                let mut m = small_model(seed::split(s, j as u64), d, vec![6], c);
                // Spread the logits so member losses differ noticeably.
                for p in m.params_mut() {
                    p.data_mut().iter_mut().for_each(|v| *v *= 3.0);
                }
                m
            })
            .collect();
        let w = simplex(&mut r, k);
        let x = uniform_vec(&mut r, d, 0.0, 1.0);
        let y = r.random_range(0..c);
        let radius = r.random_range(0.0..2.0);
        let delta = on_sphere(&mut r, d, radius);
        let xa = add(&x, &delta);
        let ens = EnsemblePredictor::new(members.clone(), validate_simplex(&w).unwrap()).unwrap();
        let lhs = cross_entropy(&ens.logits(&xa).unwrap(), y).unwrap();
        let rhs: f64 = members
            .iter()
            .zip(&w)
            .map(|(m, wj)| wj * cross_entropy(&m.logits(&xa).unwrap(), y).unwrap())
            .sum();
        out.worst_gap = out.worst_gap.max(lhs - rhs);
        if lhs > rhs + 1e-12 {
            out.violations += 1;
        }
    }
    out
}

/// Largest error of `auc` on curves whose integral is known in closed form.
pub fn auc_exact_error() -> f64 {
    let mut worst = 0.0f64;
    let mut check = |points: Vec<(f64, f64)>, target: f64, expect: f64| {
        let curve = AccuracyCurve::new(points, "fixed").unwrap();
        worst = worst.max((auc(&curve, target).unwrap() - expect).abs());
    };
    for c in [0.0, 0.3, 0.75, 1.0] {
        check(vec![(0.0, c), (0.25, c), (0.5, c)], 0.5, c);
        check(vec![(0.0, c), (0.4, c)], 0.1, c);
    }
    check(vec![(0.0, 1.0), (1.0, 0.5)], 1.0, 0.75);
    // Linear from 0.9 to 0.4 on [0, 0.5]: mean is 0.65.
    check(vec![(0.0, 0.9), (0.2, 0.7), (0.5, 0.4)], 0.5, 0.65);
    // Flat 1 on [0, 0.2], then down to 0.5 at 0.4: (0.2 + 0.15) / 0.4.
    check(vec![(0.0, 1.0), (0.2, 1.0), (0.4, 0.5)], 0.4, 0.875);
    // Target inside the last segment: 1 - t/2 on [0, 0.5], mean 0.875.
    check(vec![(0.0, 1.0), (1.0, 0.5)], 0.5, 0.875);
    worst
}

/// Largest gap between `auc` and a 10^6-cell Riemann sum on random
/// non-increasing curves.
pub fn auc_riemann_error(cases: usize) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..cases as u64 {
        let mut r = rng(seed::split(0xA0C, s));
        let n = r.random_range(2..15);
        let mut eps: Vec<f64> = (0..n - 1).map(|_| r.random_range(0.0..1.0)).collect();
        eps.push(0.0);
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        let mut acc: Vec<f64> = (0..eps.len()).map(|_| r.random_range(0.0..1.0)).collect();
        acc.sort_by(|a, b| b.total_cmp(a));
        let points: Vec<(f64, f64)> = eps.into_iter().zip(acc).collect();
        if points.len() < 2 {
            continue;
        }
        let last = points.last().unwrap().0;
        let target = last * r.random_range(0.05..1.0);
        let curve = AccuracyCurve::new(points.clone(), "random").unwrap();
        let got = auc(&curve, target).unwrap();
        worst = worst.max((got - riemann_auc(&points, target, 1_000_000)).abs());
    }
    worst
}

pub struct Monotonicity {
    pub loss_violations: usize,
    /// Largest per-example loss decrease between successive radii.
    pub worst_loss_drop: f64,
    /// Largest accuracy increase between successive radii.
    pub worst_acc_rise: f64,
}

/// Per-example losses and accuracies of a nested sweep over `grid`.
pub fn monotonicity<P: Predictor + ?Sized>(
    model: &P,
    data: &Dataset,
    grid: &[f64],
    cfg: &AttackConfig,
) -> Monotonicity {
    let points = sweep(model, data, grid, cfg, SweepMode::Nested).unwrap();
    let mut out = Monotonicity {
        loss_violations: 0,
        worst_loss_drop: 0.0,
        worst_acc_rise: 0.0,
    };
    for pair in points.windows(2) {
        out.worst_acc_rise = out.worst_acc_rise.max(pair[1].accuracy() - pair[0].accuracy());
        for (a, b) in pair[0].examples.iter().zip(&pair[1].examples) {
            let drop = a.loss - b.loss;
            out.worst_loss_drop = out.worst_loss_drop.max(drop);
            if drop > 1e-9 {
                out.loss_violations += 1;
            }
        }
    }
    out
}

/// Desk substrate: two Gaussians, margin `4 sigma`, in `[0, 1]^dim`.
pub fn desk_data(n: usize, dim: usize, data_seed: u64) -> Dataset {
    gen_two_gaussians(n, dim, 4.0, 1.0, data_seed).unwrap()
}

/// Half the distance between the class means after normalization.
pub fn desk_half_margin() -> f64 {
    // Raw half-margin 2 sigma; the generator maps [-6 sigma, 6 sigma] to [0, 1].
    2.0 / 12.0
}

pub fn quick_natural_model(data: &Dataset, s: u64) -> ModelParams {
    let arch = Architecture::new(data.dim(), vec![16], 2).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        ..TrainConfig::default()
    };
    train_standard(data, &arch, &cfg, s).unwrap()
}
