//! Federated learning: data, model, local training and aggregation.

pub mod dataset;
pub mod idx;
pub mod model;
pub mod train;

pub use dataset::{partition_noniid, synthetic, Dataset, Partition, PartitionSpec, Shard, CLASSES};
pub use idx::load_idx;
pub use model::{Mlp, LENET_300_100};
pub use train::{aggregate, evaluate, local_train, LocalUpdate, TrainConfig};
