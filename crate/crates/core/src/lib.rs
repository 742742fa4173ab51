//! Probing Vision Transformer encoders for compositional structure over
//! wavelet-subband primitives.
//!
//! An image is split by a 2D DWT into `3M + 1` subband images that sum back
//! to it exactly ([`wavelet`]). Each part is pushed through a frozen ViT
//! ([`vit`]) and a weighted sum of the parts' CLS tokens is fitted so that
//! the classifier head reproduces the original prediction ([`composer`]).
//! [`metrics`] holds the representation-similarity measures and [`harness`]
//! the experiment drivers and report writers.

pub mod composer;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod raster;
pub mod tensor;
pub mod vit;
pub mod wavelet;

pub use error::{Error, Result};
pub use raster::Image;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/wavelets.md")]
    mod wavelets {}
    #[doc = include_str!("../../../book/src/vit.md")]
    mod vit {}
    #[doc = include_str!("../../../book/src/composition.md")]
    mod composition {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
