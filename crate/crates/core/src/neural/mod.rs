//! A small deterministic neural engine: row-major tensors, layers with
//! analytic gradients, Adam, and the MLP and CNN-LSTM decoders built on it.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{lstm_step, relu, Affine, Conv1d, Layer, Lstm};
pub use model::{
    build_cnn_lstm, build_cnn_lstm_sized, build_mlp, build_mlp_sized, CnnLstmShape, Model,
};
pub use network::{Arch, NeuralDecoder, WindowSource};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, predict_source, train, History, Loss, SampleSource, TrainConfig, VecSource,
};
