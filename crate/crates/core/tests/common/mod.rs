#![allow(dead_code)]

pub mod fd_cases;
pub mod scenarios;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use robens::autodiff::{Graph, Tensor, Var};
use robens::models::{init_model, make_composite, Architecture, CompositeModel, ModelParams};
use robens::seed;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Floor on the denominator of the relative error, so gradients that are
/// zero up to rounding do not blow it up.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(s: u64) -> ChaCha8Rng {
    seed::rng(s)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform_vec(rng, n, lo, hi)).unwrap()
}

/// Values bounded away from zero, for ops with a kink at 0.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Random linear functional of `y`: `sum(R · flatten(y))`.
pub fn project(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Var {
    let n = g.value(y).len();
    let flat = g.reshape(y, vec![n]).unwrap();
    let r = g.constant(Tensor::new(vec![1, n], uniform_vec(rng, n, -1.0, 1.0)).unwrap());
    let out = g.matmul(r, flat).unwrap();
    g.sum(out)
}

/// Largest relative error between the backward pass and central differences
/// of `build` over every element of every input.
///
/// `build` must be deterministic: it is replayed once per perturbation, so
/// any randomness it uses has to come from a fresh rng seeded inside.
pub fn max_grad_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();

    let eval = |perturbed: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap().data().to_vec();
        for (j, &a) in analytic.iter().enumerate().take(t.len()) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Cross-entropy straight from its definition, `-ln(e^z_y / sum e^z)`.
pub fn naive_cross_entropy(logits: &[f64], label: usize) -> f64 {
    let total: f64 = logits.iter().map(|z| z.exp()).sum();
    -(logits[label].exp() / total).ln()
}

pub fn small_model(s: u64, input: usize, hidden: Vec<usize>, classes: usize) -> ModelParams {
    init_model(&Architecture::new(input, hidden, classes).unwrap(), s)
}

pub fn small_composite(s: u64, input: usize, classes: usize) -> CompositeModel {
    let robust = small_model(seed::split(s, 1), input, vec![5], classes).with_train_eps(0.1);
    let natural = small_model(seed::split(s, 2), input, vec![4], classes).with_train_eps(0.0);
    make_composite(robust, natural, seed::split(s, 3)).unwrap()
}

/// Midpoint Riemann sum with `n` cells of the piecewise-linear interpolant
/// over `[0, target]`, divided by `target`.
pub fn riemann_auc(points: &[(f64, f64)], target: f64, n: usize) -> f64 {
    let interp = |e: f64| {
        let k = points.partition_point(|p| p.0 <= e).clamp(1, points.len() - 1);
        let (e0, a0) = points[k - 1];
        let (e1, a1) = points[k];
        a0 + (a1 - a0) * (e - e0) / (e1 - e0)
    };
    let h = target / n as f64;
    (0..n).map(|i| interp((i as f64 + 0.5) * h)).sum::<f64>() * h / target
}
