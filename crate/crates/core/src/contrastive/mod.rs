//! Projection heads, momentum machinery, the negative memory bank, and the
//! global and local contrastive losses.

mod bank;
mod loss;
mod momentum;
mod predictor;

pub use bank::MemoryBank;
pub use loss::{info_nce, local_losses, total_loss, LocalLosses, LocalSwitches, LossWeights};
pub use momentum::{dynamic_momentum, momentum_update};
pub use predictor::Predictor;
