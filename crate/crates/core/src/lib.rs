//! Core algorithms for CT atlas construction: volumes and geometry, field of
//! view cropping, self-similarity descriptors, discrete affine and deformable
//! registration, transforms, atlas products and evaluation metrics.
//!
//! The crate is `no_std` and only needs an allocator; file formats, the
//! command line and threading live in the companion `atlasreg` crate.

#![no_std]
// Small fixed-size matrix code reads best with index loops, and `!(a < b)`
// deliberately rejects NaN along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod affine;
pub mod atlas;
pub mod descriptor;
pub mod dt;
pub mod error;
pub mod field;
pub mod fov;
pub mod geometry;
pub mod linalg;
mod math;
pub mod metrics;
pub mod mrf;
pub mod phantom;
pub mod register;
pub mod report;
pub mod stats;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
