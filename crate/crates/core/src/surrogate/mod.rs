//! Swish multilayer perceptron surrogate for the whitened misfit.

mod io;
mod mlp;
mod train;

pub use io::{load_network, read_network, save_network, write_network};
pub use mlp::{swish, swish_derivative, Layer, MlpArchitecture, MlpSurrogate};
pub use train::{loss, loss_and_gradient, train, train_from, Adam, Gradients, TrainOptions, TrainingSet};
