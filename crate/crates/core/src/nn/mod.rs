//! Plaintext dense networks: model files, training, quantization and the
//! exact integer forward pass that encrypted inference must reproduce.

mod data;
mod model;
mod quant;
mod train;

pub use data::Dataset;
pub use model::{
    argmax, load_model, save_model, ActivationKind, DenseLayer, ModelSpec, MODEL_FORMAT_VERSION,
};
pub use quant::{
    decode_logits, layer_forward_mod, oracle_forward_int, quantize, scale_plan, LayerScale,
    QuantizedLayer, QuantizedModel, ScalePlan,
};
pub use train::{
    accuracy, config_hash, train_sgd, Architecture, EpochStats, TrainConfig, TrainOutcome,
};

pub fn forward(model: &ModelSpec, x: &[f64]) -> crate::Result<Vec<f64>> {
    model.forward(x)
}
