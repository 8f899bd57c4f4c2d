//! Minimal trainable building blocks for the sentence classifiers.

pub mod layers;
pub mod optim;
pub mod serialize;
pub mod tensor;
pub mod train;

pub use layers::{
    cross_entropy, dropout, max_over_time, mean_over_time, softmax, Activation, BiLstm, Dense,
    LstmCell,
};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use tensor::{ParamId, ParamSet, Real, Tensor};
pub use train::{grad_check, grad_check_report, train, EarlyStopping, GradCheckReport, History, Labeled, Network, TrainConfig};
