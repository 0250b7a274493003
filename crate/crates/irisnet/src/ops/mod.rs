//! Neural network building blocks and their exact gradients.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod norm;
pub mod pool;
pub mod tape;

pub use activation::{relu, softmax_channels};
pub use conv::{conv2d, conv2d_direct, transposed_conv2d, ConvSpec, Padding};
pub use gradcheck::finite_difference_check;
pub use norm::{batchnorm_eval, batchnorm_train, BnRunning};
pub use pool::maxpool2d;
pub use tape::{Gradients, Tape, ValueId};
