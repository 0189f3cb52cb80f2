use crate::autodiff::{affine, Graph, Tensor, Var};
use crate::predictor::{check_input, Predictor};
use crate::{seed, Error, Result};

use super::mlp::{glorot_layer, ModelParams};

/// Linear head over the concatenated penultimate features of a robust and a
/// natural backbone. Backbones are frozen: only `head` is ever trained.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeModel {
    robust: ModelParams,
    natural: ModelParams,
    /// `[weight [C, h_r + h_n], bias [C]]`
    head: Vec<Tensor>,
    pub head_seed: u64,
    /// Radius the head was adversarially trained at (0 before training).
    pub head_eps: f64,
}

/// Builds a composite with a Glorot-initialized head over the fused width.
///
/// The first argument is the robust backbone and must have the larger
/// `train_eps`.
pub fn make_composite(
    robust: ModelParams,
    natural: ModelParams,
    head_seed: u64,
) -> Result<CompositeModel> {
    check_backbones(&robust, &natural)?;
    let width = robust.arch().penultimate_width() + natural.arch().penultimate_width();
    let (w, b) = glorot_layer(&mut seed::rng(head_seed), robust.arch().num_classes, width);
    Ok(CompositeModel {
        robust,
        natural,
        head: vec![w, b],
        head_seed,
        head_eps: 0.0,
    })
}

fn check_backbones(robust: &ModelParams, natural: &ModelParams) -> Result<()> {
    if robust.arch().num_classes != natural.arch().num_classes {
        return Err(Error::contract(format!(
            "backbones disagree on class count: {} vs {}",
            robust.arch().num_classes,
            natural.arch().num_classes
        )));
    }
    if robust.arch().input_dim != natural.arch().input_dim {
        return Err(Error::contract(format!(
            "backbones disagree on input width: {} vs {}",
            robust.arch().input_dim,
            natural.arch().input_dim
        )));
    }
    if !(robust.train_eps > natural.train_eps) {
        return Err(Error::contract(format!(
            "robust backbone (train_eps {}) must be trained at a larger radius than the natural one ({})",
            robust.train_eps, natural.train_eps
        )));
    }
    Ok(())
}

impl CompositeModel {
    /// Reassembles a stored composite.
    pub fn from_parts(
        robust: ModelParams,
        natural: ModelParams,
        head: Vec<Tensor>,
        head_seed: u64,
        head_eps: f64,
    ) -> Result<Self> {
        check_backbones(&robust, &natural)?;
        let width = robust.arch().penultimate_width() + natural.arch().penultimate_width();
        let classes = robust.arch().num_classes;
        if head.len() != 2 || head[0].shape() != [classes, width] || head[1].shape() != [classes] {
            return Err(Error::Validation(format!(
                "head must be [{classes}, {width}] and [{classes}]"
            )));
        }
        Ok(Self {
            robust,
            natural,
            head,
            head_seed,
            head_eps,
        })
    }

    pub fn robust(&self) -> &ModelParams {
        &self.robust
    }

    pub fn natural(&self) -> &ModelParams {
        &self.natural
    }

    pub fn head(&self) -> &[Tensor] {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut [Tensor] {
        &mut self.head
    }

    /// Always true: nothing in this crate hands out mutable backbones.
    pub fn backbones_frozen(&self) -> bool {
        true
    }

    /// Replaces the natural backbone, keeping the head.
    pub fn with_natural(mut self, natural: ModelParams) -> Result<Self> {
        check_backbones(&self.robust, &natural)?;
        if natural.arch().penultimate_width() != self.natural.arch().penultimate_width() {
            return Err(Error::dim("with_natural", "penultimate width changed"));
        }
        self.natural = natural;
        Ok(self)
    }

    pub fn fused_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self.input_dim(), x.len())?;
        let mut f = self.robust.features_of(x);
        f.extend(self.natural.features_of(x));
        Ok(f)
    }

    pub fn composite_logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::vector(self.logits(x.data())?))
    }

    /// Records the composite with the head bound to `head` (two vars).
    /// Backbone parameters are always constants.
    pub fn record_with_head(&self, graph: &mut Graph, head: &[Var], x: Var) -> Result<Var> {
        let rb = self.robust.bind(graph, false);
        let fr = self.robust.record_features(graph, &rb, x)?;
        let nb = self.natural.bind(graph, false);
        let fn_ = self.natural.record_features(graph, &nb, x)?;
        let fused = graph.concat(fr, fn_)?;
        let z = graph.matmul(head[0], fused)?;
        graph.add(z, head[1])
    }
}

impl Predictor for CompositeModel {
    fn input_dim(&self) -> usize {
        self.robust.arch().input_dim
    }

    fn num_classes(&self) -> usize {
        self.robust.arch().num_classes
    }

    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let head: Vec<Var> = self.head.iter().map(|t| graph.constant(t.clone())).collect();
        self.record_with_head(graph, &head, x)
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.fused_features(x)?;
        let (w, b) = (&self.head[0], &self.head[1]);
        Ok(affine(w.data(), w.shape()[1], &f, Some(b.data())))
    }
}
