//! The trainable amplifier: a small reverse-mode differentiation core, four
//! network cores, Adam training with early stopping, checkpoints and
//! phase-reuse inference.

pub mod checkpoint;
pub mod graph;
pub mod infer;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use graph::{Graph, Var};
pub use infer::{infer, predict_magnitudes};
pub use model::{loss_mse, positional_encoding, AmpModel, Arch, ModelConfig, OUT_BINS};
pub use optim::{adam_step, AdamState, TrainConfig};
pub use params::ParamStore;
pub use tensor::{matmul, matmul_nt, matmul_tn, Mat};
pub use train::{mean_loss, train, EarlyStopping, EpochRecord, History};
