//! Dense matrices, reverse-mode differentiation and the AdamW optimizer.

mod adamw;
pub mod finite_diff;
mod matrix;
mod params;
mod tape;

pub use adamw::{AdamW, AdamWConfig, LrSchedule, Moments};
pub use matrix::Matrix;
pub use params::{checksum, Binding, Parameterized, Trainable};
pub use tape::{sigmoid, Gradients, Tape, Var};
