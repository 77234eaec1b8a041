//! Comparison samplers: unbiased tree-traversal sampling and biased
//! fixed-size-buffer sampling.

pub mod fixed_buffer;
pub mod random_path;

pub use fixed_buffer::{fixedbuffer_sample, Chunk, FixedBufferIndex, FixedBufferSession, DEFAULT_BUFFER_SIZE};
pub use random_path::{randompath_sample, QuadTree, QuadTreeIndex, RandomPathSession, DEFAULT_LEAF_CAPACITY};

macro_rules! impl_incremental {
    ($($t:ty),*) => {$(
        impl crate::sampler::IncrementalSampler for $t {
            fn next_update(&mut self) -> Result<crate::sampler::SampleBatch, crate::sampler::SamplingError> {
                <$t>::next_update(self)
            }

            fn is_exhausted(&self) -> bool {
                <$t>::is_exhausted(self)
            }

            fn total_updates(&self) -> u32 {
                <$t>::total_updates(self)
            }
        }
    )*};
}

impl_incremental!(FixedBufferSession, RandomPathSession);
