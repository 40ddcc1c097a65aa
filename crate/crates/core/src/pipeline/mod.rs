pub mod dataset;
pub mod forward;
pub mod infer;
pub mod train;

pub use dataset::{collect_dataset, Dataset, Sample};
pub use forward::FusionLevel;
pub use infer::{infer, DepthOracle, InferOptions, InferResult, NextView, RgbCamera, SceneCamera};
pub use train::{label_next_view, train, NextViewLabel, Variant};
