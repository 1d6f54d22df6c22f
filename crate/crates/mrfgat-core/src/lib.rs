//! Graph-attention point-cloud classifier: autodiff engine, geometry and
//! neighbor search, the multi-scale attention network, dataset handling, and
//! the training loop.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod model;
pub mod train;

pub use autodiff::Tensor;
pub use error::{Error, Result};
pub use geometry::PointCloud;
