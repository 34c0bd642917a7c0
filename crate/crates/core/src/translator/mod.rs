//! Unpaired night-to-day image translation: a small reverse-mode autodiff
//! engine, the generator and discriminator networks, losses and training.

pub mod checkpoint;
pub mod disc;
pub mod generator;
pub mod loss;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use disc::{disc_features, DiscKind, DiscSet};
pub use loss::{MsNorm, Perspective};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{lr_at, train, CycleModel, EpochStats, TrainConfig};
