//! Gabor-filter front ends for small CNNs trained on turntable images, with
//! distance-shift evaluation and linear probes on intermediate blocks.

pub mod dataset;
pub mod error;
pub mod gabor;
pub mod harness;
pub mod imgio;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod probe;
pub mod svm;
pub mod tensorfile;
pub mod train;

pub use error::{Error, Result};
