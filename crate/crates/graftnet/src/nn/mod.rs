//! The network engine: layers, the network container, loss, optimizer,
//! and the finite-difference gradient check.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;

pub use gradcheck::{gradient_check, GradCheckEntry, GradCheckReport};
pub use layers::{ArchitectureSpec, InputSpec, LayerSpec};
pub use loss::{accuracy, cross_entropy_grad, cross_entropy_loss, softmax_rows};
pub use network::{ConvLayerWeights, Network};
pub use optim::{effective_lr, sgd_step, sgd_step_network, TrainerConfig};
