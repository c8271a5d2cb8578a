//! Forward/backward kernels and the optimizer.
//!
//! Kernels are plain functions over immutable inputs. Where a kernel
//! processes a batch, per-sample work may run on the current rayon pool, but
//! every reduction over the batch is summed in sample order so results do not
//! depend on the thread count.

mod activation;
mod adam;
mod conv;
mod linear;
mod loss;
mod norm;

pub use activation::{maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, PoolCache};
pub use adam::{adam_step, AdamHyper, AdamMoments, RowMask};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_output_side, ConvGrads, ConvLayerState, MacCounters,
};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use norm::{batchnorm_backward, batchnorm_forward, batchnorm_inference, BatchNormCache, BatchNormConfig, BatchNormGrads};

/// Runs `f` for every sample index. Inside a rayon pool with more than one
/// thread the samples are spread over the pool; otherwise they run in order.
pub(crate) fn map_samples<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if rayon::current_thread_index().is_some() && rayon::current_num_threads() > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
