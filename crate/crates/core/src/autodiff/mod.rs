//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod rng;
pub mod scalar;
pub mod store;
pub mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, store_gradient_check};
pub use graph::{BnUpdate, Graph, Var, BN_EPS, LN_EPS};
pub use kernels::{same_padding, separable_param_counts, ConvGeom};
pub use rng::Rng;
pub use scalar::Scalar;
pub use store::{decode_tensors, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
