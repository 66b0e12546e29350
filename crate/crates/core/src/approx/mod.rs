//! Hand-written function approximators shared by the transition regression
//! and the Q-network: a ReLU multilayer perceptron with exact reverse-mode
//! gradients, the Adam optimizer, and ridge-regularized least squares.

mod adam;
mod linear;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use linear::{fit_linear, LinearModel};
pub use mlp::{fit_mlp, FitTrace, Mlp, MlpFile, MlpTrainConfig};
