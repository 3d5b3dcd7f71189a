//! Rectified pinhole camera working on feature-map coordinates.
//!
//! Detector outputs live on a feature map that is `downsample` times smaller
//! than the image. Intrinsics stay in pixels, so feature coordinates are
//! multiplied by the downsampling factor before the intrinsics are applied.
//!
//! The optional translation column `(tx, ty)` of a 3x4 projection matrix is
//! honoured, so that KITTI `P2` rows round-trip exactly. With `tx = ty = 0`
//! and `downsample = 1` the back-projection is the textbook
//! `x = (u - ax) z / fx`, `y = (v - ay) z / fy`.
//!
//! Frame convention: x right, y down, z forward.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A point in the camera frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn midpoint(&self, other: &Self) -> Self {
        let half = T::lit(0.5);
        Self::new(
            (self.x + other.x) * half,
            (self.y + other.y) * half,
            (self.z + other.z) * half,
        )
    }

    /// Entrywise absolute value.
    pub fn abs(&self) -> Self {
        Self::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T: Real> Add for Point3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl<T: Real> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl<T: Real> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// A continuous location on the feature map (feature cells).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeaturePoint<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> FeaturePoint<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn midpoint(&self, other: &Self) -> Self {
        let half = T::lit(0.5);
        Self::new((self.u + other.u) * half, (self.v + other.v) * half)
    }

    pub fn distance_squared(&self, other: &Self) -> T {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Pinhole intrinsics plus projection offset and feature-map downsampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera<T> {
    pub fx: T,
    pub fy: T,
    pub ax: T,
    pub ay: T,
    pub tx: T,
    pub ty: T,
    downsample: u32,
}

impl<T: Real> PinholeCamera<T> {
    pub fn new(fx: T, fy: T, ax: T, ay: T, tx: T, ty: T, downsample: u32) -> Result<Self> {
        let all_finite = [fx, fy, ax, ay, tx, ty].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        if fx <= T::zero() || fy <= T::zero() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if downsample == 0 {
            return Err(Error::invalid("downsampling factor must be >= 1"));
        }
        Ok(Self {
            fx,
            fy,
            ax,
            ay,
            tx,
            ty,
            downsample,
        })
    }

    /// Camera without the projection-matrix translation column.
    pub fn from_intrinsics(fx: T, fy: T, ax: T, ay: T, downsample: u32) -> Result<Self> {
        Self::new(fx, fy, ax, ay, T::zero(), T::zero(), downsample)
    }

    pub fn downsample(&self) -> u32 {
        self.downsample
    }

    pub fn with_downsample(mut self, downsample: u32) -> Result<Self> {
        if downsample == 0 {
            return Err(Error::invalid("downsampling factor must be >= 1"));
        }
        self.downsample = downsample;
        Ok(self)
    }

    fn scale(&self) -> T {
        T::from_u32(self.downsample).expect("u32 converts")
    }

    /// Lifts a feature-map location at depth `z` to the camera frame.
    pub fn back_project(&self, u: T, v: T, z: T) -> Result<Point3<T>> {
        if !(z.is_finite() && z > T::zero()) {
            return Err(Error::invalid(format!(
                "depth must be positive and finite, got {z}"
            )));
        }
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::invalid("feature coordinates must be finite"));
        }
        Ok(self.back_project_unchecked(u, v, z))
    }

    /// Back-projection without input validation; used in inner loops where
    /// the caller already guarantees `z > 0`.
    #[inline]
    pub fn back_project_unchecked(&self, u: T, v: T, z: T) -> Point3<T> {
        let s = self.scale();
        Point3::new(
            ((u * s - self.ax) * z - self.tx) / self.fx,
            ((v * s - self.ay) * z - self.ty) / self.fy,
            z,
        )
    }

    /// Partial derivatives of `back_project` at `(u, v, z)`.
    ///
    /// Returns rows `d(x, y, z) / d(u, v, z)`.
    pub fn back_project_jacobian(&self, u: T, v: T, z: T) -> [[T; 3]; 3] {
        let s = self.scale();
        let zero = T::zero();
        [
            [s * z / self.fx, zero, (u * s - self.ax) / self.fx],
            [zero, s * z / self.fy, (v * s - self.ay) / self.fy],
            [zero, zero, T::one()],
        ]
    }

    /// Projects a camera-frame point onto the feature map.
    pub fn project(&self, p: &Point3<T>) -> Result<FeaturePoint<T>> {
        if !(p.z.is_finite() && p.z > T::zero()) {
            return Err(Error::invalid(format!(
                "point must lie in front of the camera, got z={}",
                p.z
            )));
        }
        if !p.is_finite() {
            return Err(Error::invalid("point must be finite"));
        }
        let s = self.scale();
        Ok(FeaturePoint::new(
            (self.fx * p.x + self.ax * p.z + self.tx) / (p.z * s),
            (self.fy * p.y + self.ay * p.z + self.ty) / (p.z * s),
        ))
    }
}

/// Maps the unconstrained depth-branch output to metric depth:
/// `z = 1 / sigmoid(z_hat) - 1`.
///
/// Algebraically this is `exp(-z_hat)`, which is how it is evaluated.
pub fn depth_decode<T: Real>(z_hat: T) -> Result<T> {
    if !z_hat.is_finite() {
        return Err(Error::invalid("depth logit must be finite"));
    }
    let z = (-z_hat).exp();
    if !(z.is_finite() && z > T::zero()) {
        return Err(Error::invalid(format!(
            "depth logit {z_hat} decodes outside the representable range"
        )));
    }
    Ok(z)
}

/// Inverse of [`depth_decode`]: `logit(1 / (z + 1)) = -ln z`.
pub fn depth_encode<T: Real>(z: T) -> Result<T> {
    if !(z.is_finite() && z > T::zero()) {
        return Err(Error::invalid(format!(
            "depth must be positive and finite, got {z}"
        )));
    }
    Ok(-z.ln())
}

/// Viewing angle of a point, `atan(x / z)`.
pub fn viewing_angle<T: Real>(x: T, z: T) -> Result<T> {
    if !(z > T::zero()) {
        return Err(Error::invalid(format!(
            "viewing angle needs z > 0, got {z}"
        )));
    }
    Ok((x / z).atan())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    if angle > -pi && angle <= pi {
        return angle;
    }
    let wrapped = angle - two_pi * ((angle - pi) / two_pi).ceil();
    // rounding can land exactly on -pi
    if wrapped <= -pi {
        wrapped + two_pi
    } else {
        wrapped
    }
}

/// Global yaw from local orientation and viewing angle (KITTI:
/// `alpha = rotation_y - atan(x / z)`).
pub fn local_to_global_yaw<T: Real>(alpha: T, gamma: T) -> T {
    wrap_angle(alpha + gamma)
}

pub fn global_to_local_yaw<T: Real>(yaw: T, gamma: T) -> T {
    wrap_angle(yaw - gamma)
}

/// Rotation about the camera Y axis,
/// `[[cos g, 0, -sin g], [0, 1, 0], [sin g, 0, cos g]]`.
///
/// Applied to a point on the viewing ray at angle `g`, it lands on the
/// optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationY<T> {
    cos: T,
    sin: T,
}

impl<T: Real> RotationY<T> {
    pub fn new(gamma: T) -> Self {
        Self {
            cos: gamma.cos(),
            sin: gamma.sin(),
        }
    }

    pub fn matrix(&self) -> [[T; 3]; 3] {
        let (c, s) = (self.cos, self.sin);
        let (zero, one) = (T::zero(), T::one());
        [[c, zero, -s], [zero, one, zero], [s, zero, c]]
    }

    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::new(
            self.cos * p.x - self.sin * p.z,
            p.y,
            self.sin * p.x + self.cos * p.z,
        )
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            cos: self.cos * other.cos - self.sin * other.sin,
            sin: self.sin * other.cos + self.cos * other.sin,
        }
    }

    pub fn determinant(&self) -> T {
        self.cos * self.cos + self.sin * self.sin
    }
}

pub fn rotation_about_y<T: Real>(gamma: T) -> [[T; 3]; 3] {
    RotationY::new(gamma).matrix()
}
