//! ReLU MLP classifiers and robust+natural composites.

mod composite;
mod mlp;

pub use composite::{make_composite, CompositeModel};
pub use mlp::{init_model, Architecture, ModelParams};
