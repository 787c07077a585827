//! Minimal layer library: dense, 1-D convolution, max pooling, LSTM/GRU,
//! dropout, binary cross-entropy, Adam and a finite-difference checker.
//! All arithmetic is `f64`.

mod adam;
mod gradcheck;
mod layers;
mod recurrent;
mod rng;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, relative_error, Evaluation, GradCheckOptions, GradCheckReport};
pub use layers::{
    bce_loss, conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_forward,
    maxpool1d_backward, maxpool1d_forward, pooled_len, sigmoid, Activation, ConvCache, DenseCache,
    DropoutMask, LayerGrads, Mode, PoolCache, CONV_KERNEL,
};
pub use recurrent::{
    bidirectional_backward, bidirectional_final, bidirectional_final_backward, bidirectional_forward,
    recurrent_backward, recurrent_forward, BidirectionalCache, CellKind, RecurrentCache,
    RecurrentGrads, RecurrentWeights,
};
pub use rng::RngStream;
pub use tensor::{ParamId, ParamSet, Tensor};

/// Glorot-uniform initialised tensor.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape is valid")
}
