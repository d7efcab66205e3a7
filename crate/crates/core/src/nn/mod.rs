//! Small 1D convolutional network engine: layers, softmax cross-entropy,
//! backprop, Adam training, gradient checking and a binary model format.

mod gradcheck;
mod io;
mod layers;
mod model;
mod tensor;
mod train;

pub use gradcheck::{gradient_check, gradient_check_report, GradCheckReport, DEFAULT_EPSILON, MIN_EPSILON};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{
    conv1d_forward, dense_forward, maxpool1d_backward, maxpool1d_forward, relu, softmax, Conv1d, Dense, Layer,
    LayerKind, LayerSpec, DEFAULT_DROPOUT_RATE, KERNEL_SIZE, POOL_SIZE,
};
pub use model::{cross_entropy, CnnModel, ForwardRecord, Gradients, Mode, ParamGrad, PROB_FLOOR};
pub use tensor::Tensor;
pub use train::{argmax, evaluate_samples, train, EpochMetrics, Sample, TrainConfig, TrainOutcome};
