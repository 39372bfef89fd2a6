//! Minimal differentiable computation: a reverse-mode tape over flat vectors,
//! dense and gated-recurrent layers, categorical sampling, and Adam.

mod checkpoint;
mod layers;
mod params;
mod sampling;
mod tape;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{dense_forward, gru_step, Activation, Dense, Gru, GruState};
pub use params::{adam_update, clip_global_norm, AdamConfig, ParamEntry, ParamId, ParameterStore};
pub use sampling::{argmax, sample_categorical, sample_slice, softmax, softmax_slice};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
