//! Dense feed-forward networks with reverse-mode gradients.

mod activation;
pub mod checkpoint;
mod network;
mod vae;

pub use activation::{sigmoid, softplus, Activation};
pub use network::{
    accuracy, ForwardTrace, GradientBundle, InitScheme, Layer, Loss, Network, NetworkSpec, OutputTarget,
};
pub use vae::{VaeModel, VaeStep};
