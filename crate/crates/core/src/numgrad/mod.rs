//! Small feed-forward networks with explicit adjoints.
//!
//! Everything here is generic over [`Scalar`](crate::Scalar): training runs in
//! `f32`, finite-difference checks in `f64`.

mod checkpoint;
mod loss;
mod mlp;
mod optim;
mod schedule;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use loss::{argmax_row, ce_loss_with_offset, log_softmax_row, softmax_rows};
pub use mlp::{Activation, ForwardPass, Gradients, MlpModel};
pub use optim::{adamw_step, OptimState};
pub use schedule::{lr_at, LrSchedule, ScheduleKind};
