//! Feedforward regressor over the 15 observed covariates, trained with
//! mini-batch Adam.

mod activation;
mod model;
mod train;

pub use activation::{mish, mish_derivative, sigmoid, softplus, Activation};
pub use model::{
    Checkpoint, CheckpointBatchNorm, CheckpointLayer, Loss, LrSchedule, MlpConfig, MlpModel, Mode,
    OutputMode, BN_EPS, BN_MOMENTUM, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use train::{
    predict_all, predict_keys, train, write_training_log, EpochLog, TrainReport, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPS, PLATEAU_THRESHOLD,
};

#[cfg(test)]
mod tests;
