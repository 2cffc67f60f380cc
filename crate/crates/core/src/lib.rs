pub mod gradcheck;
pub mod hsi;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod tensor;
pub mod trainer;

pub use hsi::{HsiCube, HsiError};
pub use model::{build, count_params, Model, ModelConfig, ModelError, Variant};
pub use noise::{corrupt, NoiseCase, NoiseError, NoiseLog, NoiseSpec};
pub use tensor::{Padding, Tape, Tensor, TensorError, Var};
pub use metrics::{MetricReport, MetricsError};
pub use trainer::{denoise_cube, train, TrainConfig, TrainError, TrainLog};
