//! Minimal neural network toolkit: tensors, a differentiation tape, LSTM and
//! dense layers, Adam, and the checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ConfigEcho, TensorEntry};
pub use graph::{Gradients, Graph, Var};
pub use layers::{ff_forward, lstm_forward, Activation, Dense, Lstm, LstmState, LstmVars};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
