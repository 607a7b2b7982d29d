//! Minimal from-scratch neural-network layers in 64-bit precision, with
//! explicit forward/backward passes over cached inputs. Parameters are
//! exposed as named contiguous blocks so the optimizer, checkpoints, and the
//! gradient checker share one view of the model.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod linear;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, softmax_rows};
pub use adam::{zero_grads, Adam};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2_backward, maxpool2_forward,
    upsample2_backward, upsample2_forward,
};

/// A named view over one parameter array and (when trainable) its gradient.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: Option<&'a mut [f64]>,
}
