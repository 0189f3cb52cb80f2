use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{affine, Graph, Tensor, Var};
use crate::predictor::{check_input, Predictor};
use crate::{seed, Error, Result};

/// Shape of a ReLU multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Validation("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Validation(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Validation("hidden widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Validation("need at least two classes".into()));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every linear layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn penultimate_width(&self) -> usize {
        *self.hidden_dims.last().expect("validated: non-empty")
    }
}

/// Glorot-uniform weights for a `[fan_out, fan_in]` layer, zero biases.
pub(crate) fn glorot_layer<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> (Tensor, Tensor) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = (0..fan_out * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    (
        Tensor::new(vec![fan_out, fan_in], w).expect("layer shape"),
        Tensor::zeros(vec![fan_out]),
    )
}

/// Parameters of one MLP: `[w0, b0, w1, b1, ...]`, weights stored
/// `[fan_out, fan_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    params: Vec<Tensor>,
    /// Radius the model was adversarially trained at; 0 for natural training.
    pub train_eps: f64,
    pub init_seed: u64,
}

/// Seeded Glorot-uniform initialization. Same `(arch, omega)` gives
/// bit-identical parameters.
pub fn init_model(arch: &Architecture, omega: u64) -> ModelParams {
    let mut rng = seed::rng(omega);
    let params = arch
        .layer_shapes()
        .into_iter()
        .flat_map(|(out, inp)| {
            let (w, b) = glorot_layer(&mut rng, out, inp);
            [w, b]
        })
        .collect();
    ModelParams {
        arch: arch.clone(),
        params,
        train_eps: 0.0,
        init_seed: omega,
    }
}

impl ModelParams {
    /// Assembles a model from stored tensors, checking that the shapes chain.
    pub fn from_parts(
        arch: Architecture,
        params: Vec<Tensor>,
        train_eps: f64,
        init_seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if params.len() != 2 * shapes.len() {
            return Err(Error::Validation(format!(
                "{} tensors for {} layers",
                params.len(),
                shapes.len()
            )));
        }
        for (i, &(out, inp)) in shapes.iter().enumerate() {
            if params[2 * i].shape() != [out, inp] || params[2 * i + 1].shape() != [out] {
                return Err(Error::Validation(format!(
                    "layer {i}: expected [{out}, {inp}] and [{out}], got {:?} and {:?}",
                    params[2 * i].shape(),
                    params[2 * i + 1].shape()
                )));
            }
        }
        if !(train_eps >= 0.0) {
            return Err(Error::Validation(format!("train_eps must be >= 0, got {train_eps}")));
        }
        Ok(Self {
            arch,
            params,
            train_eps,
            init_seed,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    /// `(weight, bias)` of layer `i`.
    pub fn layer(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.params[2 * i], &self.params[2 * i + 1])
    }

    pub fn with_train_eps(mut self, eps: f64) -> Self {
        self.train_eps = eps;
        self
    }

    /// Post-ReLU output of the last hidden layer.
    pub fn penultimate_features(&self, x: &Tensor) -> Result<Tensor> {
        check_input(self.arch.input_dim, x.len())?;
        Ok(Tensor::vector(self.features_of(x.data())))
    }

    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        check_input(self.arch.input_dim, x.len())?;
        Ok(Tensor::vector(self.logits_of(x.data())))
    }

    /// Applies the final linear layer to penultimate features.
    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        let (w, b) = self.layer(self.num_layers() - 1);
        if features.len() != w.shape()[1] {
            return Err(Error::dim(
                "head",
                format!("{} features for a head of width {}", features.len(), w.shape()[1]),
            ));
        }
        Ok(Tensor::vector(affine(w.data(), w.shape()[1], features.data(), Some(b.data()))))
    }

    pub(crate) fn features_of(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for i in 0..self.num_layers() - 1 {
            let (w, b) = self.layer(i);
            h = affine(w.data(), w.shape()[1], &h, Some(b.data()));
            h.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
        }
        h
    }

    fn logits_of(&self, x: &[f64]) -> Vec<f64> {
        let h = self.features_of(x);
        let (w, b) = self.layer(self.num_layers() - 1);
        affine(w.data(), w.shape()[1], &h, Some(b.data()))
    }

    /// Records every parameter tensor on `graph`, as differentiable leaves if
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    graph.param(p.clone())
                } else {
                    graph.constant(p.clone())
                }
            })
            .collect()
    }

    /// Records the hidden stack using previously bound parameters.
    pub fn record_features(&self, graph: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.num_layers() - 1 {
            let z = graph.matmul(bound[2 * i], h)?;
            let z = graph.add(z, bound[2 * i + 1])?;
            h = graph.relu(z);
        }
        Ok(h)
    }

    /// Records the full forward pass using previously bound parameters.
    pub fn record_with(&self, graph: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
        let h = self.record_features(graph, bound, x)?;
        let last = self.num_layers() - 1;
        let z = graph.matmul(bound[2 * last], h)?;
        graph.add(z, bound[2 * last + 1])
    }
}

impl Predictor for ModelParams {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let bound = self.bind(graph, false);
        self.record_with(graph, &bound, x)
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self.arch.input_dim, x.len())?;
        Ok(self.logits_of(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::softmax;

    fn arch(input: usize, hidden: &[usize], classes: usize) -> Architecture {
        Architecture::new(input, hidden.to_vec(), classes).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = arch(4, &[8], 3);
        let m1 = init_model(&a, 1);
        let m1b = init_model(&a, 1);
        let m2 = init_model(&a, 2);
        assert!(m1.params().iter().zip(m1b.params()).all(|(x, y)| x.bit_eq(y)));
        assert!(m1.params()[0].data() != m2.params()[0].data());
    }

    #[test]
    fn layer_shapes_chain() {
        let m = init_model(&arch(4, &[8], 3), 0);
        let shapes: Vec<_> = m.params().iter().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![8, 4], vec![8], vec![3, 8], vec![3]]);
        assert!(m.params()[1].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn weights_within_glorot_bound() {
        let m = init_model(&arch(10, &[6], 2), 9);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(m.params()[0].data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn architecture_needs_hidden_layer() {
        assert!(Architecture::new(4, vec![], 3).is_err());
        assert!(Architecture::new(4, vec![3], 1).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let mut m = init_model(&arch(3, &[4], 2), 5);
        m.params_mut().iter_mut().for_each(|p| p.data_mut().fill(0.0));
        let z = m.predict_logits(&Tensor::vector(vec![0.3, -1.0, 2.0])).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layers_pass_input_through() {
        let a = arch(3, &[3], 3);
        let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let params = vec![eye.clone(), Tensor::zeros(vec![3]), eye, Tensor::zeros(vec![3])];
        let m = ModelParams::from_parts(a, params, 0.0, 0).unwrap();
        // Non-negative input: the hidden ReLU is the identity too.
        let x = Tensor::vector(vec![0.5, 2.0, 0.0]);
        assert_eq!(m.predict_logits(&x).unwrap().data(), x.data());
    }

    #[test]
    fn logits_factor_through_features() {
        let m = init_model(&arch(4, &[8, 5], 3), 11);
        let x = Tensor::vector(vec![0.1, -0.4, 0.9, 0.3]);
        let f = m.penultimate_features(&x).unwrap();
        assert_eq!(f.len(), 5);
        assert!(m.head(&f).unwrap().bit_eq(&m.predict_logits(&x).unwrap()));
    }

    #[test]
    fn negative_preactivations_are_zeroed() {
        let a = arch(2, &[2], 2);
        let w = Tensor::new(vec![2, 2], vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let params = vec![w.clone(), Tensor::zeros(vec![2]), w, Tensor::zeros(vec![2])];
        let m = ModelParams::from_parts(a, params, 0.0, 0).unwrap();
        let f = m.penultimate_features(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(f.data(), &[0.0, 1.0]);
    }

    #[test]
    fn graph_and_direct_forward_agree_bitwise() {
        let m = init_model(&arch(5, &[7, 4], 3), 3);
        let x = vec![0.2, 0.7, -0.1, 0.0, 1.3];
        let direct = m.logits(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::vector(x));
        let out = m.record_logits(&mut g, xv).unwrap();
        assert_eq!(direct, g.value(out).data());
    }

    #[test]
    fn argmax_matches_softmax_argmax() {
        let m = init_model(&arch(3, &[6], 4), 21);
        let z = m.logits(&[0.4, 0.1, 0.8]).unwrap();
        let p = softmax(&z);
        assert_eq!(
            crate::autodiff::argmax(&z),
            crate::autodiff::argmax(&p)
        );
    }

    #[test]
    fn wrong_input_length_is_dimension_error() {
        let m = init_model(&arch(3, &[2], 2), 0);
        assert!(matches!(
            m.predict_logits(&Tensor::vector(vec![1.0])),
            Err(Error::Dimension { .. })
        ));
    }
}
