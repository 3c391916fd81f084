//! File formats, batch pipeline and command-line support around
//! [`atlasreg_core`].

// Small fixed-size matrix code reads best with index loops, and `!(a < b)`
// deliberately rejects NaN along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod nifti;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
