use super::*;
use rand::Rng;
use robens::autodiff::{Graph, Tensor, Var};
use robens::models::ModelParams;
use robens::seed;

pub const CASES: u64 = 100;

fn dims(s: u64) -> (usize, usize, usize) {
    let mut r = rng(seed::split(s, 99));
    (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5))
}

pub type Case = Box<dyn Fn(u64) -> f64>;

pub fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "matmul-vector",
            Box::new(|s| {
                let (m, k, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m, k], -1.0, 1.0), tensor(&mut r, vec![k], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.matmul(v[0], v[1]).unwrap();
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "matmul-matrix",
            Box::new(|s| {
                let (m, k, n) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m, k], -1.0, 1.0), tensor(&mut r, vec![k, n], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.matmul(v[0], v[1]).unwrap();
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "add",
            Box::new(|s| {
                let (m, _, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m], -1.0, 1.0), tensor(&mut r, vec![m], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.add(v[0], v[1]).unwrap();
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "relu",
            Box::new(|s| {
                let (m, k, _) = dims(s);
                let mut r = rng(s);
                let inputs = [Tensor::vector(away_from_zero(&mut r, m + k))];
                max_grad_error(&inputs, |g, v| {
                    let y = g.relu(v[0]);
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "concat",
            Box::new(|s| {
                let (m, k, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m], -1.0, 1.0), tensor(&mut r, vec![k], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.concat(v[0], v[1]).unwrap();
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "reshape",
            Box::new(|s| {
                let (m, k, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m * k], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.reshape(v[0], vec![m, k]).unwrap();
                    let w = g.constant(tensor(&mut rng(s + 2000), vec![k], -1.0, 1.0));
                    let y = g.matmul(y, w).unwrap();
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "scale",
            Box::new(|s| {
                let (m, _, _) = dims(s);
                let mut r = rng(s);
                let factor = r.random_range(-3.0..3.0);
                let inputs = [tensor(&mut r, vec![m], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.scale(v[0], factor);
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "sum",
            Box::new(|s| {
                let (m, k, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m, k], -1.0, 1.0)];
                max_grad_error(&inputs, |g, v| {
                    let e = g.exp(v[0]);
                    g.sum(e)
                })
            }),
        ),
        (
            "exp",
            Box::new(|s| {
                let (m, _, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m], -2.0, 2.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.exp(v[0]);
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "ln",
            Box::new(|s| {
                let (m, _, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m], 0.2, 3.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.ln(v[0]);
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "log_softmax",
            Box::new(|s| {
                let (m, _, _) = dims(s);
                let mut r = rng(s);
                let inputs = [tensor(&mut r, vec![m + 1], -3.0, 3.0)];
                max_grad_error(&inputs, |g, v| {
                    let y = g.log_softmax(v[0]).unwrap();
                    project(g, y, &mut rng(s + 1000))
                })
            }),
        ),
        (
            "cross_entropy",
            Box::new(|s| {
                let (m, _, _) = dims(s);
                let mut r = rng(s);
                let label = r.random_range(0..m + 1);
                let inputs = [tensor(&mut r, vec![m + 1], -3.0, 3.0)];
                max_grad_error(&inputs, |g, v| g.cross_entropy(v[0], label).unwrap())
            }),
        ),
    ]
}

/// Loss of a plain model with respect to every parameter and the input.
pub fn model_case(s: u64) -> f64 {
    let mut r = rng(s);
    let (input, classes) = (r.random_range(2..6), r.random_range(2..5));
    let hidden = vec![r.random_range(2..7), r.random_range(2..7)];
    let model = small_model(s, input, hidden, classes);
    let label = r.random_range(0..classes);
    let x = Tensor::vector(uniform_vec(&mut r, input, 0.0, 1.0));
    // Fresh biases are zero, which puts units exactly on the relu kink once
    // an earlier layer is dead; give them the values training would.
    let mut inputs: Vec<Tensor> = model.params().to_vec();
    for b in inputs.iter_mut().skip(1).step_by(2) {
        let vals = away_from_zero(&mut r, b.len());
        b.data_mut().copy_from_slice(&vals);
    }
    inputs.push(x);
    let n = model.params().len();
    let arch = model.arch().clone();
    max_grad_error(&inputs, |g, v| {
        let m = ModelParams::from_parts(arch.clone(), inputs[..n].to_vec(), 0.0, 0).unwrap();
        let z = m.record_with(g, &v[..n], v[n]).unwrap();
        g.cross_entropy(z, label).unwrap()
    })
}

/// Loss of a composite with respect to its head and the input.
pub fn composite_case(s: u64) -> f64 {
    let mut r = rng(s);
    let (input, classes) = (r.random_range(2..6), r.random_range(2..5));
    let c = small_composite(s, input, classes);
    let label = r.random_range(0..classes);
    let x = Tensor::vector(uniform_vec(&mut r, input, 0.0, 1.0));
    let inputs = [c.head()[0].clone(), c.head()[1].clone(), x];
    max_grad_error(&inputs, |g: &mut Graph, v: &[Var]| {
        let z = c.record_with_head(g, &v[..2], v[2]).unwrap();
        g.cross_entropy(z, label).unwrap()
    })
}

