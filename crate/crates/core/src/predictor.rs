use crate::autodiff::{argmax, cross_entropy, Graph, Tensor, Var};
use crate::{Error, Result};

/// Anything that maps an input vector to class logits differentiably.
///
/// Implementors record their forward pass on a caller-supplied [`Graph`]
/// with their own parameters as constants, so attacks can differentiate the
/// loss with respect to the input only.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Records the logits of `x` (a vector of length `input_dim`) on `graph`.
    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var>;

    /// Plain forward pass. Must agree bit-for-bit with [`record_logits`].
    ///
    /// [`record_logits`]: Predictor::record_logits
    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self.input_dim(), x.len())?;
        let mut g = Graph::new();
        let xv = g.constant(Tensor::vector(x.to_vec()));
        let out = self.record_logits(&mut g, xv)?;
        Ok(g.value(out).to_vec())
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        (**self).record_logits(graph, x)
    }
    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).logits(x)
    }
}

impl<P: Predictor + ?Sized + Send> Predictor for Box<P> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        (**self).record_logits(graph, x)
    }
    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).logits(x)
    }
}

pub(crate) fn check_input(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dim(
            "predict",
            format!("input has {got} features, model expects {expected}"),
        ));
    }
    Ok(())
}

/// Cross-entropy of `predictor` at `x`.
pub fn loss_at<P: Predictor + ?Sized>(predictor: &P, x: &[f64], label: usize) -> Result<f64> {
    cross_entropy(&predictor.logits(x)?, label)
}

/// Cross-entropy at `x` and its gradient with respect to `x`.
pub fn loss_and_input_grad<P: Predictor + ?Sized>(
    predictor: &P,
    x: &[f64],
    label: usize,
) -> Result<(f64, Vec<f64>)> {
    check_input(predictor.input_dim(), x.len())?;
    let mut g = Graph::new();
    let xv = g.param(Tensor::vector(x.to_vec()));
    let logits = predictor.record_logits(&mut g, xv)?;
    let loss = g.cross_entropy(logits, label)?;
    let mut grads = g.backward(loss)?;
    let grad = grads.take(xv).expect("input is a differentiable leaf");
    Ok((g.value(loss).item(), grad.to_vec()))
}

/// Predicted class (ties to the lowest index).
pub fn classify<P: Predictor + ?Sized>(predictor: &P, x: &[f64]) -> Result<usize> {
    Ok(argmax(&predictor.logits(x)?))
}
