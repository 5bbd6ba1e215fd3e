//! Hand-written 1-D CNN for multi-label outage localization: forward pass,
//! backpropagation, Adam and training loop.

mod adam;
mod checkpoint;
mod gemm;
mod model;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use model::{bce_loss, Architecture, CnnModel, ConvSpec, ForwardCache, InputNorm, PROB_CLAMP};
pub use tensor::{ParamSet, Tensor};
pub use train::{dataset_loss, gather, predict, train, TrainConfig, TrainReport};

pub(crate) use train::check_samples;
