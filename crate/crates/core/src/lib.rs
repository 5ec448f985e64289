//! Region-adaptive hierarchical transform over B-spline bases of order 1
//! (piecewise constant) and 2 (trilinear) for point-cloud attributes.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codec;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod sparse_ops;
pub mod spectral;
pub mod transform;

pub use error::{Error, Result};
pub use geometry::{build_hierarchy, voxelize, Hierarchy, PointCloud, RawCloud};
pub use kernels::Order;
pub use sparse_ops::FeatureTensor;
pub use spectral::ApproxConfig;
pub use transform::{analyze, synthesize, CoeffSet, ResidualMode, TransformConfig, TransformPlan};
