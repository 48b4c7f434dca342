//! Losses, optimizer, schedule, checkpoints and the training loop.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use loss::{frequency_loss, spatial_loss, total_loss, LossTerms};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use trainer::{load_params, sample_batch, StepLog, TrainConfig, Trainer, LOG_HEADER};
