//! Batch-wise compression of split-learning traffic.
//!
//! The edge binds each activation in a group of `R` to its own fixed random
//! key by circular convolution and sums the results into one vector; the cloud
//! recovers approximations by circular correlation with the same keys.
//! Gradients take the reverse path through the exact adjoints.

pub mod accounting;
pub mod data;
pub mod error;
pub mod exec;
pub mod hrr;
pub mod linalg;
pub mod net;
pub mod pipeline;
pub mod seeds;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Exec;
pub use hrr::{HrrCodec, KeyKind, KeySet};
pub use linalg::Matrix;
