//! Dense NCHW arrays with hand-written gradients for the embedding network.

pub mod checkpoint;
pub mod conv;
pub mod encoder;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use encoder::{embedding_dim, ConvBlock, EncoderGrads, EncoderModel, Tape};
pub use layers::{maxpool2, maxpool2_backward, relu, relu_backward, BatchNorm, Mode};
pub use optim::{sgd_step, OptimizerState, SchedulerState};
pub use tensor::{flatten, Matrix, Real, Tensor4};
