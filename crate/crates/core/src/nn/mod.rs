//! A small CPU network stack: convolution, pooling and dense layers,
//! softmax cross-entropy, Adam with a plateau schedule, and a training loop
//! that keeps the best validation epoch.

mod checkpoint;
mod gradcheck;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, GradCheck};
pub use loss::{argmax, cross_entropy, softmax};
pub use network::{backward, backward_accumulate, forward, LayerSpec, NetworkSpec, Trace};
pub(crate) use network::{col2im, conv_geom, im2col, pool_argmax};
pub use optim::{adam_step, plateau_replay, AdamConfig, AdamState, Plateau, PlateauConfig};
pub use tensor::{gemm, Scalar, Tensor};
pub use train::{evaluate_loss, loss_and_grad, train, EpochStats, LabeledSet, TrainConfig, TrainOutcome};

use crate::raster::Rgb;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("empty training or validation split")]
    EmptySplit,
    #[error("loss diverged in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interleaved RGB to channel-major layout.
pub fn image_to_chw(img: &Rgb) -> Vec<f32> {
    let plane = img.width() * img.height();
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c];
        }
    }
    out
}

/// Class probabilities for one image.
pub fn predict(checkpoint: &Checkpoint, image: &Rgb) -> Result<Vec<f64>, NnError> {
    let [c, h, w] = checkpoint.spec.input;
    if c != 3 || image.width() != w || image.height() != h {
        return Err(NnError::ShapeMismatch(format!(
            "image {}x{} vs network input {w}x{h}",
            image.width(),
            image.height()
        )));
    }
    let x = Tensor::from_vec(&[1, c, h, w], image_to_chw(image));
    let trace = forward(&checkpoint.spec, &checkpoint.params, &x)?;
    Ok(softmax(trace.logits()).remove(0))
}
