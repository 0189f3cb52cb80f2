//! Simplex-weighted ensembles presented to attacks as one predictor.
//!
//! Members' logits are averaged (not probabilities, not parameters).
//! Cross-entropy is convex in the logits, so for any input and any fixed
//! perturbation the ensemble loss is at most the weighted mean of the
//! member losses.

use crate::autodiff::{log_softmax, Graph, Var};
use crate::models::CompositeModel;
use crate::predictor::{check_input, Predictor};
use crate::{Error, Result};

/// Tolerance on `|sum(w) - 1|`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

/// Accepts `w` as-is if it lies on the simplex; never renormalizes.
pub fn validate_simplex(w: &[f64]) -> Result<SimplexWeights> {
    if w.is_empty() {
        return Err(Error::Validation("empty weight vector".into()));
    }
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Validation(format!("weight {i} is {v}, must be non-negative")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Validation(format!(
            "weights sum to {total}, off by {:e} (entry {} closes the gap)",
            total - 1.0,
            w.len() - 1
        )));
    }
    Ok(SimplexWeights(w.to_vec()))
}

impl SimplexWeights {
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("uniform weights need K >= 1"));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How member outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combine {
    /// `sum_j w_j * logits_j`.
    #[default]
    Logits,
    /// `log(sum_j w_j * softmax_j)`. For comparison only.
    Probabilities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePredictor<P> {
    members: Vec<P>,
    weights: SimplexWeights,
    combine: Combine,
}

impl<P: Predictor> EnsemblePredictor<P> {
    pub fn new(members: Vec<P>, weights: SimplexWeights) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::contract("ensemble needs at least one member"));
        };
        if members.len() != weights.len() {
            return Err(Error::contract(format!(
                "{} members but {} weights",
                members.len(),
                weights.len()
            )));
        }
        let (classes, dim) = (first.num_classes(), first.input_dim());
        for (j, m) in members.iter().enumerate() {
            if m.num_classes() != classes {
                return Err(Error::contract(format!(
                    "member {j} has {} classes, member 0 has {classes}",
                    m.num_classes()
                )));
            }
            if m.input_dim() != dim {
                return Err(Error::contract(format!(
                    "member {j} takes {} inputs, member 0 takes {dim}",
                    m.input_dim()
                )));
            }
        }
        Ok(Self {
            members,
            weights,
            combine: Combine::Logits,
        })
    }

    pub fn with_combine(mut self, combine: Combine) -> Self {
        self.combine = combine;
        self
    }

    pub fn members(&self) -> &[P] {
        &self.members
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    pub fn combine(&self) -> Combine {
        self.combine
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Uniform weights `1/K`.
pub fn uniform_ensemble<P: Predictor>(members: Vec<P>) -> Result<EnsemblePredictor<P>> {
    let weights = SimplexWeights::uniform(members.len())?;
    EnsemblePredictor::new(members, weights)
}

/// Weighted ensemble of composites.
pub fn composite_ensemble(
    composites: Vec<CompositeModel>,
    weights: &[f64],
) -> Result<EnsemblePredictor<CompositeModel>> {
    EnsemblePredictor::new(composites, validate_simplex(weights)?)
}

impl<P: Predictor> Predictor for EnsemblePredictor<P> {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    fn record_logits(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (m, &w) in self.members.iter().zip(self.weights.as_slice()) {
            let z = m.record_logits(graph, x)?;
            let z = match self.combine {
                Combine::Logits => z,
                Combine::Probabilities => {
                    let lp = graph.log_softmax(z)?;
                    graph.exp(lp)
                }
            };
            let term = graph.scale(z, w);
            acc = Some(match acc {
                Some(a) => graph.add(a, term)?,
                None => term,
            });
        }
        let acc = acc.expect("non-empty ensemble");
        Ok(match self.combine {
            Combine::Logits => acc,
            Combine::Probabilities => graph.ln(acc),
        })
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self.input_dim(), x.len())?;
        let mut acc: Option<Vec<f64>> = None;
        for (m, &w) in self.members.iter().zip(self.weights.as_slice()) {
            let z = m.logits(x)?;
            let z = match self.combine {
                Combine::Logits => z,
                Combine::Probabilities => log_softmax(&z).into_iter().map(f64::exp).collect(),
            };
            match &mut acc {
                Some(a) => a.iter_mut().zip(&z).for_each(|(a, zi)| *a += zi * w),
                None => acc = Some(z.iter().map(|zi| zi * w).collect()),
            }
        }
        let acc = acc.expect("non-empty ensemble");
        Ok(match self.combine {
            Combine::Logits => acc,
            Combine::Probabilities => acc.into_iter().map(f64::ln).collect(),
        })
    }
}
