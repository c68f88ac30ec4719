//! Small differentiable kernels and the LSTM severity grader built on them.
//! Everything is `f64` and single-sample; there is no autodiff graph, each
//! layer carries its own hand-written backward pass.

mod checkpoint;
mod gradcheck;
mod layers;
mod lstm;
mod mask_encoder;
mod model;
mod tensor;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, format_hex_float, load_checkpoint, parse_hex_float, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{check_gradient, grad_check, grad_check_report, reference_case, relative_error, GradCheckReport, GRAD_CHECK_LIMIT};
pub use layers::{cross_entropy, max_pool2, max_pool2_backward, sigmoid, softmax, Conv2d, Dense};
pub use lstm::{lstm_step, LstmCellParams, LstmStepCache};
pub use mask_encoder::{MaskEncoder, MaskEncoderCache, MaskEncoderConfig};
pub use model::{
    argmax_grade, backward, forward, predict_severity, sequence_loss, ForwardCache, ModelConfig, ModelInput,
    SeverityModel,
};
pub use tensor::Tensor;
pub use train::{evaluate, inverse_frequency_weights, train, EpochStats, TrainHistory, TrainParams};

/// Independent generator for `stream` under the root `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
