//! Minimal 3D-CNN engine with hand-written backward passes.
//!
//! The layer vocabulary is fixed (conv3d, maxpool3d, relu, flatten, dense,
//! softmax). A [`Network`] is a backbone producing the feature vector `h` plus
//! two optional softmax heads: the classification head and the clustering
//! head. Everything runs in `f64` so gradients can be checked against finite
//! differences.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod network;
mod sgd;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{
    conv3d_backward, conv3d_forward, dense_backward, dense_forward, maxpool3d_backward,
    maxpool3d_forward, relu_backward, relu_forward, softmax, softmax_backward, ConvGrads,
    DenseGrads, Dims3,
};
pub use loss::{
    categorical_cross_entropy, consistency_loss, pairwise_cluster_loss, ramp_up_weight, CceOutput,
    ConsistencyOutput, PairwiseOutput,
};
pub use network::{
    default_backbone, FreezeSelector, Gradients, HeadSelect, Layer, LayerKind, LayerSpec, Network,
    OutputGrads, Outputs, ParamGrad, ParamRef, Slot, Trace,
};
pub use sgd::{sgd_step, SgdConfig, SgdState};
pub use tensor::Tensor;
