//! Constraint graph: location priors on vertices, pairwise distances on edges.

use crate::camera::{PinholeCamera, Point3};
use crate::detection::{ObjectHypothesis, PairConstraint};
use crate::error::{Error, Result};
use crate::pairing::local_displacement;
use crate::scalar::Real;
use crate::uncertainty::WeightRule;

use super::linalg::DenseMatrix;
use super::SolveError;

/// Number of variables per vertex: `(u, v, z)`.
pub const VERTEX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex<T> {
    /// Index into the image's hypothesis list.
    pub object: usize,
    pub prior_u: T,
    pub prior_v: T,
    pub prior_z: T,
    /// From `sigma_uv`, shared by u and v.
    pub weight_uv: T,
    /// From `sigma_z`.
    pub weight_z: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    /// Vertex indices.
    pub a: usize,
    pub b: usize,
    pub measured: Point3<T>,
    /// From `sigma_k`, applied to all three components.
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph<T> {
    pub vertices: Vec<Vertex<T>>,
    pub edges: Vec<Edge<T>>,
    pub camera: PinholeCamera<T>,
    /// Size of the hypothesis list the graph was built from.
    pub object_count: usize,
}

/// Builds the graph for one image with `1 / sigma` weights. Objects in no
/// pair are left out and pass through the solver untouched.
pub fn build_graph<T: Real>(
    objects: &[ObjectHypothesis<T>],
    pairs: &[PairConstraint<T>],
    camera: &PinholeCamera<T>,
    max_weight: T,
) -> Result<ConstraintGraph<T>> {
    build_graph_with(objects, pairs, camera, WeightRule::InverseSigma, max_weight)
}

/// [`build_graph`] with an explicit weighting rule.
pub fn build_graph_with<T: Real>(
    objects: &[ObjectHypothesis<T>],
    pairs: &[PairConstraint<T>],
    camera: &PinholeCamera<T>,
    rule: WeightRule,
    max_weight: T,
) -> Result<ConstraintGraph<T>> {
    let mut vertex_of = vec![None; objects.len()];
    let mut vertices = Vec::new();
    let mut edges = Vec::with_capacity(pairs.len());
    for pair in pairs {
        pair.validate(objects.len())?;
        let mut vertex_for = |obj: usize| -> Result<usize> {
            if let Some(v) = vertex_of[obj] {
                return Ok(v);
            }
            let o = &objects[obj];
            o.validate()?;
            let prior = o.projected_center();
            vertices.push(Vertex {
                object: obj,
                prior_u: prior.u,
                prior_v: prior.v,
                prior_z: o.depth,
                weight_uv: rule.weight(o.sigma_uv, max_weight)?,
                weight_z: rule.weight(o.sigma_z, max_weight)?,
            });
            vertex_of[obj] = Some(vertices.len() - 1);
            Ok(vertices.len() - 1)
        };
        let a = vertex_for(pair.i)?;
        let b = vertex_for(pair.j)?;
        edges.push(Edge {
            a,
            b,
            measured: pair.k,
            weight: rule.weight(pair.sigma_k, max_weight)?,
        });
    }
    Ok(ConstraintGraph {
        vertices,
        edges,
        camera: *camera,
        object_count: objects.len(),
    })
}

impl<T: Real> ConstraintGraph<T> {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn parameter_dimension(&self) -> usize {
        VERTEX_DIM * self.vertices.len()
    }

    /// `3 N + 3 M`.
    pub fn residual_dimension(&self) -> usize {
        VERTEX_DIM * self.vertices.len() + 3 * self.edges.len()
    }

    /// Stacked `(u, v, z)` priors, the solver's starting point.
    pub fn initial_state(&self) -> Vec<T> {
        self.vertices
            .iter()
            .flat_map(|v| [v.prior_u, v.prior_v, v.prior_z])
            .collect()
    }

    fn check_state(&self, state: &[T]) -> Result<(), SolveError<T>> {
        if state.len() != self.parameter_dimension() {
            return Err(SolveError::InvalidState(format!(
                "state has {} entries, graph needs {}",
                state.len(),
                self.parameter_dimension()
            )));
        }
        for (k, z) in state.iter().skip(2).step_by(VERTEX_DIM).enumerate() {
            if !(z.is_finite() && *z > T::zero()) {
                return Err(SolveError::InvalidState(format!(
                    "vertex {k} has non-positive depth {z}"
                )));
            }
        }
        Ok(())
    }

    pub fn vertex_center(&self, state: &[T], vertex: usize) -> Point3<T> {
        let o = VERTEX_DIM * vertex;
        self.camera
            .back_project_unchecked(state[o], state[o + 1], state[o + 2])
    }

    /// Weighted residuals: three location terms per vertex, then three
    /// distance terms per edge.
    pub fn residuals(&self, state: &[T]) -> Result<Vec<T>, SolveError<T>> {
        self.check_state(state)?;
        let mut out = Vec::with_capacity(self.residual_dimension());
        for (k, v) in self.vertices.iter().enumerate() {
            let o = VERTEX_DIM * k;
            let (su, sz) = (v.weight_uv.sqrt(), v.weight_z.sqrt());
            out.push(su * (v.prior_u - state[o]));
            out.push(su * (v.prior_v - state[o + 1]));
            out.push(sz * (v.prior_z - state[o + 2]));
        }
        for e in &self.edges {
            let ca = self.vertex_center(state, e.a);
            let cb = self.vertex_center(state, e.b);
            let (d, _) = local_displacement(&ca, &cb)
                .map_err(|err| SolveError::InvalidState(err.to_string()))?;
            let k = d.abs();
            let sw = e.weight.sqrt();
            out.push(sw * (e.measured.x - k.x));
            out.push(sw * (e.measured.y - k.y));
            out.push(sw * (e.measured.z - k.z));
        }
        Ok(out)
    }

    /// Sum of squared weighted residuals, `e^T W e`.
    pub fn cost(&self, state: &[T]) -> Result<T, SolveError<T>> {
        Ok(self.residuals(state)?.iter().map(|r| *r * *r).sum())
    }

    /// Analytic Jacobian of [`Self::residuals`].
    ///
    /// The edge rotation angle follows the pair midpoint, so its dependence
    /// on the variables is differentiated through. With `rho = |(p_x, p_z)|`
    /// the rotated displacement is
    /// `r_x = (p_z d_x - p_x d_z) / rho`, `r_y = d_y`,
    /// `r_z = (p_x d_x + p_z d_z) / rho`. The derivative of `|r|` uses
    /// `sign(0) = +1`.
    pub fn jacobian(&self, state: &[T]) -> Result<DenseMatrix<T>, SolveError<T>> {
        self.check_state(state)?;
        let n = self.parameter_dimension();
        let mut jac = DenseMatrix::zeros(self.residual_dimension(), n);
        for (k, v) in self.vertices.iter().enumerate() {
            let o = VERTEX_DIM * k;
            let (su, sz) = (v.weight_uv.sqrt(), v.weight_z.sqrt());
            jac.set(o, o, -su);
            jac.set(o + 1, o + 1, -su);
            jac.set(o + 2, o + 2, -sz);
        }
        let half = T::lit(0.5);
        let row0 = VERTEX_DIM * self.vertices.len();
        for (m, e) in self.edges.iter().enumerate() {
            let ca = self.vertex_center(state, e.a);
            let cb = self.vertex_center(state, e.b);
            let d = ca - cb;
            let p = ca.midpoint(&cb);
            let rho = (p.x * p.x + p.z * p.z).sqrt();
            if !(rho > T::zero()) {
                return Err(SolveError::InvalidState(
                    "pair midpoint at the camera center".into(),
                ));
            }
            let rx = (p.z * d.x - p.x * d.z) / rho;
            let rz = (p.x * d.x + p.z * d.z) / rho;
            let rho2 = rho * rho;
            let zero = T::zero();
            // d r / d d
            let dr_dd = [
                [p.z / rho, zero, -p.x / rho],
                [zero, T::one(), zero],
                [p.x / rho, zero, p.z / rho],
            ];
            // d r / d p
            let dr_dp = [
                [
                    -d.z / rho - rx * p.x / rho2,
                    zero,
                    d.x / rho - rx * p.z / rho2,
                ],
                [zero, zero, zero],
                [
                    d.x / rho - rz * p.x / rho2,
                    zero,
                    d.z / rho - rz * p.z / rho2,
                ],
            ];
            let sign = |x: T| if x < T::zero() { -T::one() } else { T::one() };
            let signs = [sign(rx), sign(d.y), sign(rz)];
            let sw = e.weight.sqrt();
            for (vertex, side) in [(e.a, T::one()), (e.b, -T::one())] {
                let o = VERTEX_DIM * vertex;
                let bp = self
                    .camera
                    .back_project_jacobian(state[o], state[o + 1], state[o + 2]);
                // d r / d c for this endpoint: side * dr_dd + 0.5 dr_dp
                let mut dr_dc = [[zero; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        dr_dc[r][c] = side * dr_dd[r][c] + half * dr_dp[r][c];
                    }
                }
                for r in 0..3 {
                    for var in 0..3 {
                        let mut acc = zero;
                        for c in 0..3 {
                            acc += dr_dc[r][c] * bp[c][var];
                        }
                        let row = row0 + 3 * m + r;
                        let prev = jac.get(row, o + var);
                        jac.set(row, o + var, prev - sw * signs[r] * acc);
                    }
                }
            }
        }
        Ok(jac)
    }
}

/// Convenience: validates a pair list against its hypotheses without
/// building a graph.
pub fn validate_pairs<T: Real>(
    objects: &[ObjectHypothesis<T>],
    pairs: &[PairConstraint<T>],
) -> Result<()> {
    for p in pairs {
        p.validate(objects.len())?;
        for &k in &[p.i, p.j] {
            objects[k]
                .validate()
                .map_err(|e| Error::Validation(format!("object {k}: {e}")))?;
        }
    }
    Ok(())
}
