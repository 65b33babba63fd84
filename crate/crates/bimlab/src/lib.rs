//! Computable machinery for 3D Brownian intersection exponents.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernelfun`]: exact functionals on finite nonnegative kernels
//!   (switching constant, extremal total variation, maximal coupling).
//! - [`geometry`]: cones, cylinders, sausages, polyline distance indices,
//!   cone families, uncovered-cone search and escape polylines.
//! - [`brownian`]: seeded path sampling, exact annulus laws, walk on spheres
//!   and hitting-probability checks.
//! - [`covertime`]: geometric-sum dynamic programs and cover-time bounds.
//! - [`slitdomain`]: empirical layer kernels, layered coupling and
//!   conditional separation experiments.
//! - [`exponents`]: Monte Carlo estimation of non-intersection probabilities
//!   and intersection exponents.
//!
//! Every sampler is a pure function of its inputs and an [`rng::RngStream`],
//! so results do not depend on the number of worker threads.

// `!(a <= b)` style comparisons are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod covertime;
pub mod exponents;
pub mod geometry;
pub mod kernelfun;
pub mod rng;
pub mod slitdomain;
pub mod stats;

pub use geometry::Vec3;
pub use rng::RngStream;
