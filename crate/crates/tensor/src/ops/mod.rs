mod conv;
mod elementwise;
mod linear;
mod loss;
mod metric;
mod norm;
mod pool;

pub use conv::{conv2d, conv_output_size, KERNEL};
pub use linear::linear;
pub use loss::{argmax_rows, cross_entropy, nll_from_probabilities, softmax, softmax_rows};
pub use metric::{class_mean, neg_sq_dist};
pub use norm::{batchnorm2d, BATCHNORM_EPS};
pub use pool::maxpool2x2;
