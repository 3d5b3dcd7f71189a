//! Geometric core for monocular 3D detection post-processing with pairwise
//! spatial constraints.
//!
//! The pieces, bottom-up:
//!
//! - [`camera`]: pinhole projection on feature-map coordinates, depth
//!   reparametrization and yaw/viewing-angle conversions.
//! - [`geometry`]: gravity-aligned boxes, bird's-eye-view polygons and
//!   rotated-box IoU.
//! - [`pairing`]: range-circle pair selection and pairwise distance targets.
//! - [`uncertainty`]: aleatoric L1 loss and `1 / sigma` weights.
//! - [`optimizer`]: per-image constraint graph solved by Levenberg-Marquardt.
//! - [`kitti_io`]: KITTI labels, calibration and the extended prediction
//!   format with uncertainties and pair lines.
//! - [`pipeline`]: one prediction file through the optimizer and back to
//!   KITTI labels.
//! - [`eval`]: AP_40 / AP_11 in 2D, bird's-eye view and 3D, plus AOS.
//! - [`synthetic`]: seeded scenes with exact constraints for end-to-end
//!   checks of the optimizer.
//! - [`config`]: the `key = value` text format shared by specs and run
//!   configurations.
//!
//! The geometric modules are generic over the scalar type ([`Real`]);
//! file I/O, evaluation and the synthetic harness work in `f64`. The
//! aliases below name the `f64` instantiations used throughout.

pub mod camera;
pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kitti_io;
pub mod optimizer;
pub mod pairing;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Real;

pub type CameraModel = camera::PinholeCamera<f64>;
pub type CameraModelF32 = camera::PinholeCamera<f32>;
pub type WorldPoint = camera::Point3<f64>;
pub type FeaturePoint = camera::FeaturePoint<f64>;
pub type Box3D = geometry::Box3<f64>;
pub type Box3DF32 = geometry::Box3<f32>;
pub type BevPolygon = geometry::BevPolygon<f64>;
pub type PairCandidate = pairing::PairCandidate<f64>;
pub type PairTarget = pairing::PairTarget<f64>;
pub type UncertainScalar = uncertainty::UncertainScalar<f64>;
pub type ObjectHypothesis = detection::ObjectHypothesis<f64>;
pub type PairConstraint = detection::PairConstraint<f64>;
pub type ConstraintGraph = optimizer::ConstraintGraph<f64>;
pub type Solution = optimizer::Solution<f64>;
