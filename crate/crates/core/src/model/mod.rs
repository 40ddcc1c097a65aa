pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod optim;
pub mod params;
pub mod rot6d;
pub mod tensor;

pub use loss::{LossParts, LossValues};
pub use net::{Bound, Model, ModelConfig};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::ParamStore;
pub use rot6d::Rotation6D;
pub use tensor::{Graph, Tensor, Var};
