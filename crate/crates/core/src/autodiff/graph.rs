use std::collections::BTreeMap;

use super::loss::{log_softmax, softmax};
use super::tensor::{affine, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Concat(Var, Var),
    Reshape(Var),
    Scale(Var, f64),
    Sum(Var),
    Exp(Var),
    Ln(Var),
    LogSoftmax(Var),
    CrossEntropy(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Operands of node `i` always have indices `< i`, so a single reverse sweep
/// visits nodes in topological order. Graphs are rebuilt for every forward
/// pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug, Clone, Default)]
pub struct GradMap {
    grads: BTreeMap<Var, Tensor>,
}

impl GradMap {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Matrix product. `a` is `[m, k]`; `b` is `[k, n]` (result `[m, n]`) or
    /// a vector `[k]` (result `[m]`).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mismatch = || {
            Error::dim(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            )
        };
        let [m, k] = *av.shape() else {
            return Err(mismatch());
        };
        let out = match *bv.shape() {
            [kb] if kb == k => Tensor::new(vec![m], affine(av.data(), k, bv.data(), None))?,
            [kb, n] if kb == k => {
                let (ad, bd) = (av.data(), bv.data());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = (0..k).map(|p| ad[i * k + p] * bd[p * n + j]).sum();
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            _ => return Err(mismatch()),
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[a]);
        self.push(out, Op::Relu(a), needs)
    }

    /// Concatenates two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 1 || bv.shape().len() != 1 {
            return Err(Error::dim(
                "concat",
                format!("expected vectors, got {:?} and {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let out = Tensor::vector(data);
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        let needs = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), needs))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), needs)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.exp()).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[a]);
        self.push(out, Op::Exp(a), needs)
    }

    /// Natural logarithm; non-positive inputs yield `-inf`/NaN as in `f64::ln`.
    pub fn ln(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.ln()).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[a]);
        self.push(out, Op::Ln(a), needs)
    }

    /// Log-softmax of a vector, stabilized by subtracting the max logit.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 1 {
            return Err(Error::dim(
                "log_softmax",
                format!("expected a vector, got {:?}", av.shape()),
            ));
        }
        let out = Tensor::vector(log_softmax(av.data()));
        let needs = self.needs(&[a]);
        Ok(self.push(out, Op::LogSoftmax(a), needs))
    }

    /// Softmax cross-entropy `-log softmax(logits)[label]` of a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 1 {
            return Err(Error::dim(
                "cross_entropy",
                format!("expected a logit vector, got {:?}", lv.shape()),
            ));
        }
        let loss = super::loss::cross_entropy(lv.data(), label)?;
        let needs = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, label), needs))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every leaf recorded with `requires_grad` gets an entry, zero-filled if
    /// the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = if bv.shape().len() == 1 { 1 } else { bv.shape()[1] };
                    let (ad, bd) = (av.data(), bv.data());
                    if self.nodes[a.0].needs_grad {
                        let mut ga = vec![0.0; m * k];
                        for r in 0..m {
                            for p in 0..k {
                                ga[r * k + p] = (0..n).map(|c| g[r * n + c] * bd[p * n + c]).sum();
                            }
                        }
                        accumulate(&mut adj, a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut gb = vec![0.0; k * n];
                        for p in 0..k {
                            for c in 0..n {
                                gb[p * n + c] = (0..m).map(|r| ad[r * k + p] * g[r * n + c]).sum();
                            }
                        }
                        accumulate(&mut adj, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut adj, a, g.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut adj, b, g);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, a, ga);
                }
                Op::Concat(a, b) => {
                    let split = self.value(a).len();
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut adj, a, g[..split].to_vec());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut adj, b, g[split..].to_vec());
                    }
                }
                Op::Reshape(a) => accumulate(&mut adj, a, g),
                Op::Scale(a, factor) => {
                    accumulate(&mut adj, a, g.iter().map(|x| x * factor).collect());
                }
                Op::Sum(a) => {
                    let n = self.value(a).len();
                    accumulate(&mut adj, a, vec![g[0]; n]);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    accumulate(&mut adj, a, g.iter().zip(y).map(|(gi, yi)| gi * yi).collect());
                }
                Op::Ln(a) => {
                    let x = self.value(a).data();
                    accumulate(&mut adj, a, g.iter().zip(x).map(|(gi, xi)| gi / xi).collect());
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    let ga = node
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(y, gi)| gi - y.exp() * total)
                        .collect();
                    accumulate(&mut adj, a, ga);
                }
                Op::CrossEntropy(a, label) => {
                    let mut ga = softmax(self.value(a).data());
                    ga[label] -= 1.0;
                    ga.iter_mut().for_each(|v| *v *= g[0]);
                    accumulate(&mut adj, a, ga);
                }
            }
        }

        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let data = match adj.get_mut(i).and_then(Option::take) {
                    Some(g) => g,
                    None => vec![0.0; node.value.len()],
                };
                let grad = Tensor::new(node.value.shape().to_vec(), data)?;
                grads.insert(Var(i), grad);
            }
        }
        Ok(grads.into())
    }
}

impl From<BTreeMap<Var, Tensor>> for GradMap {
    fn from(grads: BTreeMap<Var, Tensor>) -> Self {
        Self { grads }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], var: Var, grad: Vec<f64>) {
    match &mut adj[var.0] {
        Some(existing) => existing.iter_mut().zip(grad).for_each(|(e, g)| *e += g),
        slot @ None => *slot = Some(grad),
    }
}
