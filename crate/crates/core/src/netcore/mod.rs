//! Small differentiable networks: three fixed architectures with
//! hand-written backward passes, cross-entropy, SGD and EMA.

mod arch;
mod checkpoint;
mod loss;
mod model;
mod ops;
mod optim;

pub use arch::{ArchKind, ArchSpec};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use loss::{cross_entropy, cross_entropy_probs, loss_and_gradients, PROB_FLOOR};
pub use model::{ForwardPass, Gradients, Mode, NetModel, NoiseConfig, Param};
pub use optim::{ema_update, sgd_step};
