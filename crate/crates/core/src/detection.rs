//! Per-object detector outputs and predicted pair constraints.

use crate::camera::{FeaturePoint, PinholeCamera, Point3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Box dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dimensions<T> {
    pub w: T,
    pub h: T,
    pub l: T,
}

/// One detected object. All 2D quantities are feature-map coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectHypothesis<T> {
    pub class: String,
    /// Heatmap keypoint `(u^g, v^g)`.
    pub keypoint: FeaturePoint<T>,
    /// Offset from the keypoint to the projected 3D center.
    pub offset: FeaturePoint<T>,
    pub depth: T,
    pub sigma_z: T,
    /// Shared by both offset components.
    pub sigma_uv: T,
    pub dims: Dimensions<T>,
    /// Local orientation.
    pub alpha: T,
    pub bbox_center: FeaturePoint<T>,
    /// `(w^b, h^b)`.
    pub bbox_size: (T, T),
    pub score: T,
}

impl<T: Real> ObjectHypothesis<T> {
    /// Projected 3D center `c^g + offset`.
    pub fn projected_center(&self) -> FeaturePoint<T> {
        FeaturePoint::new(
            self.keypoint.u + self.offset.u,
            self.keypoint.v + self.offset.v,
        )
    }

    pub fn center(&self, cam: &PinholeCamera<T>) -> Result<Point3<T>> {
        let c = self.projected_center();
        cam.back_project(c.u, c.v, self.depth)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v.is_finite() && v > T::zero();
        if !positive(self.sigma_z) || !positive(self.sigma_uv) {
            return Err(Error::Validation(format!(
                "uncertainties must be positive (sigma_z={}, sigma_uv={})",
                self.sigma_z, self.sigma_uv
            )));
        }
        if !positive(self.depth) {
            return Err(Error::Validation(format!(
                "depth must be positive, got {}",
                self.depth
            )));
        }
        if !(self.keypoint.is_finite() && self.offset.is_finite()) {
            return Err(Error::Validation(
                "feature coordinates must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// A predicted pairwise constraint between hypotheses `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConstraint<T> {
    pub i: usize,
    pub j: usize,
    /// Local-frame absolute distance `(kx, ky, kz)`, each entry >= 0.
    pub k: Point3<T>,
    pub sigma_k: T,
}

impl<T: Real> PairConstraint<T> {
    pub fn validate(&self, object_count: usize) -> Result<()> {
        if self.i >= object_count || self.j >= object_count {
            return Err(Error::Validation(format!(
                "pair ({}, {}) references a missing object (have {object_count})",
                self.i, self.j
            )));
        }
        if self.i == self.j {
            return Err(Error::Validation(format!(
                "pair ({}, {}) must join two distinct objects",
                self.i, self.j
            )));
        }
        if !(self.sigma_k.is_finite() && self.sigma_k > T::zero()) {
            return Err(Error::Validation(format!(
                "sigma_k must be positive, got {}",
                self.sigma_k
            )));
        }
        let k = self.k.to_array();
        if k.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Validation(format!(
                "pair distance entries must be finite and non-negative, got {:?}",
                self.k
            )));
        }
        Ok(())
    }
}
