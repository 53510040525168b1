//! Dense numeric core: matrices, the fixed feed-forward policy network with
//! hand-written reverse mode, SGD, and k-means for vocabulary construction.

mod kmeans;
mod matrix;
mod network;

pub use kmeans::{kmeans, nearest_center, Clustering};
pub use matrix::Matrix;
pub use network::{
    accumulate, argmax, log_softmax, sgd_step, softmax, Dense, DropoutMask, ForwardCache,
    GradientSet, NetworkShape, NetworkWeights, Params, PolicyOutput,
};
