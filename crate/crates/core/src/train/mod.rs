//! Losses, optimizer, checkpoints and the training loop.

mod checkpoint;
mod fit;
mod loss;
mod optim;

pub use checkpoint::{Checkpoint, TableEntry, DTYPE_F32, FORMAT_VERSION, MAGIC};
pub use fit::{
    batch_indices, batch_objective, config_hash, evaluate_l2, fit, FitOutcome, MetricsRow,
    TrainConfig, CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER, SUMMARY_FILE,
};
pub use loss::{
    loss_kl, loss_l2, loss_xent, mixed_loss, Lambdas, LossBreakdown, LossInputs, KL_FLOOR,
};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};
