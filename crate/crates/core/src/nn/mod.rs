//! Minimal numeric kernel: MLP, losses, Adam, RNG and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod rng;

pub use adam::{clip_grad_norm, AdamState};
pub use mlp::{MlpCache, MlpParams};
pub use rng::Rng;
