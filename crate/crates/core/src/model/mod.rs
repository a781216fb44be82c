//! Convolutional classifier, loss, optimizer and training loop.

mod checkpoint;
mod cnn;
mod loss;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cnn::{BlockSpec, Cnn, CnnConfig, Example, Pooling};
pub use loss::{argmax, cross_entropy, one_hot, softmax};
pub use optim::{adam_step, lr_at, lr_schedule, AdamConfig, AdamState, BASE_LR, LR_DECAY};
pub use tensor::{Params, Tensor};
pub use train::{
    evaluate, loss_and_accuracy, train, train_from, EarlyStopping, EpochRecord, StopDecision, Task, TaskMetrics,
    TrainConfig, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in forward pass")]
    NonFiniteActivation,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: u32 },
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
