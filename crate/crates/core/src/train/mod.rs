//! SGD training, evaluation, datasets and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use data::{load_cifar10_binary, synthetic, Dataset, DatasetSource, Normalization, SyntheticSpec};
pub use loss::{cross_entropy, in_top_k, topk_accuracy, topk_hits};
pub use optim::{sgd_step, Sgd};
pub use schedule::{lr_at, Decay, LrSchedule};
pub use trainer::{evaluate, moving_average, train_loop, EpochRecord, EvalMetrics, TrainConfig, TrainOutputs};
