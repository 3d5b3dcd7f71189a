//! Gravity-aligned 3D boxes and their overlap measures.
//!
//! Box convention: `l` runs along the heading, `h` is vertical and `w` is
//! lateral. `yaw` rotates about the camera Y axis with the KITTI sign, so
//! that a box with `yaw = 0` points along +x and `yaw = pi/2` points along -z.
//! Centers are true geometric centers; KITTI labels anchor the bottom face
//! and are shifted by `kitti_io`.

use crate::camera::{wrap_angle, Point3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Intersection areas below this are treated as empty.
pub const AREA_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3<T> {
    pub center: Point3<T>,
    pub w: T,
    pub h: T,
    pub l: T,
    pub yaw: T,
}

impl<T: Real> Box3<T> {
    pub fn new(center: Point3<T>, w: T, h: T, l: T, yaw: T) -> Result<Self> {
        let b = Self {
            center,
            w,
            h,
            l,
            yaw: wrap_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v.is_finite() && v > T::zero();
        if !(positive(self.w) && positive(self.h) && positive(self.l)) {
            return Err(Error::invalid(format!(
                "box dimensions must be positive (w={}, h={}, l={})",
                self.w, self.h, self.l
            )));
        }
        if !(self.center.is_finite() && self.yaw.is_finite()) {
            return Err(Error::invalid("box center and yaw must be finite"));
        }
        Ok(())
    }

    pub fn volume(&self) -> T {
        self.w * self.h * self.l
    }

    /// `(cos yaw, sin yaw)` mapping local `(l, w)` axes to camera `(x, z)`.
    fn heading(&self) -> (T, T) {
        (self.yaw.cos(), self.yaw.sin())
    }

    fn local_to_camera(&self, along: T, up: T, lateral: T) -> Point3<T> {
        let (c, s) = self.heading();
        Point3::new(
            self.center.x + c * along + s * lateral,
            self.center.y + up,
            self.center.z - s * along + c * lateral,
        )
    }

    /// The eight box corners.
    ///
    /// Indices 0..4 are the bottom face (larger y, since y points down),
    /// 4..8 the top face. Within a face the order is
    /// `(+l, +w), (+l, -w), (-l, -w), (-l, +w)` in half-extents.
    pub fn corners(&self) -> [Point3<T>; 8] {
        let half = T::lit(0.5);
        let (hl, hh, hw) = (self.l * half, self.h * half, self.w * half);
        let face = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)];
        let mut out = [Point3::default(); 8];
        for (k, &(a, b)) in face.iter().enumerate() {
            out[k] = self.local_to_camera(a, hh, b);
            out[k + 4] = self.local_to_camera(a, -hh, b);
        }
        out
    }

    /// Footprint in the x-z ground plane.
    pub fn bev(&self) -> BevPolygon<T> {
        let c = self.corners();
        BevPolygon::from_points([
            [c[0].x, c[0].z],
            [c[1].x, c[1].z],
            [c[2].x, c[2].z],
            [c[3].x, c[3].z],
        ])
    }

    /// Vertical extent `[top, bottom]` in the y-down frame.
    pub fn vertical_extent(&self) -> (T, T) {
        let half = self.h * T::lit(0.5);
        (self.center.y - half, self.center.y + half)
    }

    /// Containment test in the ground plane, used by sampling oracles.
    pub fn bev_contains(&self, x: T, z: T) -> bool {
        let (c, s) = self.heading();
        let (dx, dz) = (x - self.center.x, z - self.center.z);
        let along = c * dx - s * dz;
        let lateral = s * dx + c * dz;
        let half = T::lit(0.5);
        along.abs() <= self.l * half && lateral.abs() <= self.w * half
    }
}

/// Convex quadrilateral in the ground plane, vertices counter-clockwise in
/// `(x, z)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPolygon<T> {
    vertices: [[T; 2]; 4],
}

impl<T: Real> BevPolygon<T> {
    fn from_points(mut vertices: [[T; 2]; 4]) -> Self {
        if signed_area(&vertices) < T::zero() {
            vertices.reverse();
        }
        Self { vertices }
    }

    pub fn vertices(&self) -> &[[T; 2]; 4] {
        &self.vertices
    }

    pub fn area(&self) -> T {
        signed_area(&self.vertices)
    }
}

/// Shoelace formula; positive for counter-clockwise vertex order.
pub fn signed_area<T: Real>(poly: &[[T; 2]]) -> T {
    let n = poly.len();
    if n < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc * T::lit(0.5)
}

fn cross<T: Real>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn line_intersection<T: Real>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    // point on segment p-q where it crosses the line a-b
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Sutherland-Hodgman clipping of `subject` against a convex,
/// counter-clockwise `clip` polygon.
pub fn clip_convex<T: Real>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output: Vec<[T; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for k in 0..m {
            let cur = input[k];
            let prev = input[(k + m - 1) % m];
            let cur_in = cross(a, b, cur) >= T::zero();
            let prev_in = cross(a, b, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

/// Area shared by two convex polygons.
pub fn intersection_area<T: Real>(a: &BevPolygon<T>, b: &BevPolygon<T>) -> T {
    let clipped = clip_convex(&a.vertices, &b.vertices);
    let area = signed_area(&clipped);
    if area < T::lit(AREA_EPSILON) {
        T::zero()
    } else {
        area
    }
}

fn check_pair<T: Real>(a: &Box3<T>, b: &Box3<T>) -> Result<()> {
    a.validate()?;
    b.validate()?;
    Ok(())
}

fn ratio<T: Real>(inter: T, union: T) -> T {
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Bird's-eye-view IoU of two rotated footprints.
pub fn bev_iou<T: Real>(a: &Box3<T>, b: &Box3<T>) -> Result<T> {
    check_pair(a, b)?;
    let (pa, pb) = (a.bev(), b.bev());
    let inter = intersection_area(&pa, &pb);
    Ok(ratio(inter, pa.area() + pb.area() - inter))
}

/// Volumetric IoU of two gravity-aligned boxes.
pub fn iou_3d<T: Real>(a: &Box3<T>, b: &Box3<T>) -> Result<T> {
    check_pair(a, b)?;
    let (ta, ba) = a.vertical_extent();
    let (tb, bb) = b.vertical_extent();
    let overlap = (ba.min(bb) - ta.max(tb)).max(T::zero());
    let inter = intersection_area(&a.bev(), &b.bev()) * overlap;
    Ok(ratio(inter, a.volume() + b.volume() - inter))
}

/// Axis-aligned image rectangle (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub left: T,
    pub top: T,
    pub right: T,
    pub bottom: T,
}

impl<T: Real> Rect<T> {
    pub fn new(left: T, top: T, right: T, bottom: T) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn width(&self) -> T {
        (self.right - self.left).max(T::zero())
    }

    pub fn height(&self) -> T {
        (self.bottom - self.top).max(T::zero())
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            (self.left + self.right) * half,
            (self.top + self.bottom) * half,
        )
    }

    pub fn intersection(&self, other: &Self) -> T {
        let w = self.right.min(other.right) - self.left.max(other.left);
        let h = self.bottom.min(other.bottom) - self.top.max(other.top);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection(other);
        ratio(inter, self.area() + other.area() - inter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn unit_box(yaw: f64) -> Box3<f64> {
        Box3::new(Point3::new(0.0, 0.0, 0.0), 1.0, 1.0, 1.0, yaw).unwrap()
    }

    fn extent(corners: &[Point3<f64>; 8]) -> (f64, f64) {
        let span = |vals: Vec<f64>| {
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        (
            span(corners.iter().map(|c| c.x).collect()),
            span(corners.iter().map(|c| c.z).collect()),
        )
    }

    #[test]
    fn unit_cube_corners() {
        for c in unit_box(0.0).corners() {
            assert_eq!(c.x.abs(), 0.5);
            assert_eq!(c.y.abs(), 0.5);
            assert_eq!(c.z.abs(), 0.5);
        }
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = Box3::new(Point3::new(1.0, 0.0, 20.0), 1.6, 1.5, 4.0, 0.0).unwrap();
        let (ex, ez) = extent(&b.corners());
        assert!((ex - 4.0).abs() < 1e-12 && (ez - 1.6).abs() < 1e-12);
        let r = Box3 {
            yaw: FRAC_PI_2,
            ..b
        };
        let (ex, ez) = extent(&r.corners());
        assert!((ex - 1.6).abs() < 1e-12 && (ez - 4.0).abs() < 1e-12);
    }

    #[test]
    fn corner_centroid_is_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = Box3::new(
                Point3::new(
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(1.0..60.0),
                ),
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.3..6.0),
                rng.gen_range(-PI..PI),
            )
            .unwrap();
            let sum = b
                .corners()
                .iter()
                .fold(Point3::default(), |acc, c| acc + *c);
            assert!((sum * (1.0 / 8.0) - b.center).norm() < 1e-12);
        }
    }

    #[test]
    fn bev_polygon_is_ccw_with_expected_area() {
        let b: Box3<f64> = Box3::new(Point3::new(3.0, 1.0, 10.0), 2.0, 1.5, 4.0, 0.7).unwrap();
        let p = b.bev();
        assert!((p.area() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint() {
        let b: Box3<f64> = Box3::new(Point3::new(2.0, 1.0, 15.0), 1.7, 1.5, 4.1, 0.4).unwrap();
        assert!((bev_iou(&b, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((iou_3d(&b, &b).unwrap() - 1.0).abs() < 1e-12);
        let far = Box3 {
            center: Point3::new(102.0, 1.0, 15.0),
            ..b
        };
        assert_eq!(bev_iou(&b, &far).unwrap(), 0.0);
        assert_eq!(iou_3d(&b, &far).unwrap(), 0.0);
    }

    #[test]
    fn rotated_unit_square_matches_closed_form_and_sampling() {
        let a = unit_box(0.0);
        let b = unit_box(FRAC_PI_4);
        let iou = bev_iou(&a, &b).unwrap();
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((iou - expected).abs() < 1e-12);

        // Monte-Carlo over the union's bounding square
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let r = 0.5 * 2f64.sqrt();
        let (mut both, mut either) = (0u64, 0u64);
        for _ in 0..1_000_000 {
            let x = rng.gen_range(-r..r);
            let z = rng.gen_range(-r..r);
            let (ia, ib) = (a.bev_contains(x, z), b.bev_contains(x, z));
            both += (ia && ib) as u64;
            either += (ia || ib) as u64;
        }
        assert!((both as f64 / either as f64 - iou).abs() < 0.003);
    }

    #[test]
    fn vertical_overlap_cases() {
        let a: Box3<f64> = Box3::new(Point3::new(0.0, 0.0, 10.0), 1.8, 2.0, 4.0, 0.3).unwrap();
        let full = Box3 {
            center: Point3::new(0.0, 2.0, 10.0),
            ..a
        };
        assert_eq!(iou_3d(&a, &full).unwrap(), 0.0);
        let half = Box3 {
            center: Point3::new(0.0, 1.0, 10.0),
            ..a
        };
        assert!((iou_3d(&a, &half).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((bev_iou(&a, &half).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let a = unit_box(0.0);
        let flat = Box3 { w: 0.0, ..a };
        assert!(bev_iou(&a, &flat).is_err());
        assert!(iou_3d(&flat, &a).is_err());
        assert!(Box3::new(Point3::new(0.0, 0.0, 1.0), 1.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn symmetric_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                Box3::new(
                    Point3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(8.0..12.0),
                    ),
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(1.0..5.0),
                    rng.gen_range(-PI..PI),
                )
                .unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let ab = bev_iou(&a, &b).unwrap();
            assert!((ab - bev_iou(&b, &a).unwrap()).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ab));
            let v = iou_3d(&a, &b).unwrap();
            assert!((v - iou_3d(&b, &a).unwrap()).abs() < 1e-12);
            assert!(v <= ab + 1e-12);

            // rotate the whole scene about the camera Y axis
            let theta = rng.gen_range(-PI..PI);
            let rot = |bx: &Box3<f64>| {
                let (c, s) = (theta.cos(), theta.sin());
                let p = bx.center;
                Box3::new(
                    Point3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z),
                    bx.w,
                    bx.h,
                    bx.l,
                    bx.yaw + theta,
                )
                .unwrap()
            };
            let rotated = bev_iou(&rot(&a), &rot(&b)).unwrap();
            assert!((rotated - ab).abs() < 1e-9, "{rotated} vs {ab}");
        }
    }

    #[test]
    fn rect_iou() {
        let a = Rect::<f64>::new(0.0, 0.0, 10.0, 10.0);
        let b = Rect::new(5.0, 0.0, 15.0, 10.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(a.iou(&Rect::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(a.center(), (5.0, 5.0));
    }

    #[test]
    fn single_precision_iou() {
        let a = Box3::<f32>::new(Point3::new(0.0, 0.0, 10.0), 1.0, 1.0, 1.0, 0.0).unwrap();
        let b = Box3 {
            yaw: std::f32::consts::FRAC_PI_4,
            ..a
        };
        let expected = (2.0 * (2f64.sqrt() - 1.0)) / (2.0 - 2.0 * (2f64.sqrt() - 1.0));
        assert!((bev_iou(&a, &b).unwrap() as f64 - expected).abs() < 1e-5);
    }
}
