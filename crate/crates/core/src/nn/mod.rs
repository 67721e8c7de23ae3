//! Differentiable building blocks. Every layer caches what its backward
//! pass needs during `forward`; composites chain `backward` calls in
//! reverse order.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod element;
pub mod gradcheck;
pub mod layer;
pub mod norm;
pub mod param;
pub mod pool;
pub mod residual;
pub mod sequential;
pub mod tensor;

pub use activation::{relu, sigmoid, Relu};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use element::{gemm, Element};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport, GradCheckTarget};
pub use layer::{Ctx, HasParams, Layer, Mode};
pub use norm::BatchNorm;
pub use param::Param;
pub use pool::{global_average_pool, GlobalAvgPool, MaxPool2x2};
pub use residual::ResidualBlock;
pub use sequential::Sequential;
pub use tensor::Tensor4;
