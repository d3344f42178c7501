//! Correlation estimation for irregularly sampled, time-uncertain series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod bayes;
pub mod chronology;
pub mod error;
pub mod experiments;
pub mod pseudoproxy;
pub mod rng;
pub mod series;

pub use alignment::{AlignedPairs, AlignmentSpec, Method};
pub use bayes::{InferenceConfig, PosteriorSample, Sign, Summary};
pub use error::{Error, ErrorKind, Result};
pub use series::TimeSeries;
