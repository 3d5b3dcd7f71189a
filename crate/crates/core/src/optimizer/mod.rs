//! Uncertainty-weighted refinement of object locations.
//!
//! Every object that takes part in at least one pair becomes a vertex with
//! variables `(u, v, z)`: its projected 3D center on the feature map and its
//! depth. Each vertex carries location priors weighted by `1 / sigma_uv` and
//! `1 / sigma_z`; each pair contributes three distance residuals weighted by
//! `1 / sigma_k`. The weighted sum of squares is minimized with
//! Levenberg-Marquardt starting from the priors. [`LmConfig::weight_rule`]
//! can switch the weights to `1 / sigma^2`.

mod graph;
mod linalg;
mod lm;

use std::fmt;

use thiserror::Error;

pub use graph::{
    build_graph, build_graph_with, validate_pairs, ConstraintGraph, Edge, Vertex, VERTEX_DIM,
};
pub use linalg::{cholesky_solve, DenseMatrix};
pub use lm::{minimize, LmConfig, LmOutcome};

use crate::camera::{FeaturePoint, PinholeCamera};
use crate::detection::{ObjectHypothesis, PairConstraint};
use crate::error::Error;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError<T: fmt::Debug> {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("diverged after {iterations} iterations")]
    Diverged {
        iterations: usize,
        /// Last state with finite cost.
        last_state: Vec<T>,
        last_cost: T,
    },
    #[error(transparent)]
    Input(#[from] Error),
}

impl<T: Real> From<SolveError<T>> for Error {
    fn from(e: SolveError<T>) -> Self {
        match e {
            SolveError::InvalidState(msg) => Error::InvalidInput(msg),
            SolveError::Diverged {
                iterations,
                last_cost,
                ..
            } => Error::Diverged {
                iterations,
                last_cost: last_cost.as_f64(),
            },
            SolveError::Input(e) => e,
        }
    }
}

/// Per-image solver report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub vertices: usize,
    pub edges: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Diagnostics {
    /// `image_id N M initial_cost final_cost iterations converged`
    pub fn to_line(&self, image_id: &str) -> String {
        format!(
            "{image_id} {} {} {:.9e} {:.9e} {} {}",
            self.vertices,
            self.edges,
            self.initial_cost,
            self.final_cost,
            self.iterations,
            self.converged as u8
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    /// Same length and order as the input hypotheses.
    pub objects: Vec<ObjectHypothesis<T>>,
    /// `true` for objects that were part of the graph.
    pub refined: Vec<bool>,
    pub diagnostics: Diagnostics,
}

/// Solves `graph` and writes the optimized `(u, v, z)` back into a copy of
/// `objects`. The keypoint is kept and the offset absorbs the change in
/// `(u, v)`. Objects outside the graph are cloned verbatim.
pub fn solve<T: Real>(
    graph: &ConstraintGraph<T>,
    objects: &[ObjectHypothesis<T>],
    config: &LmConfig,
) -> Result<Solution<T>, SolveError<T>> {
    if objects.len() != graph.object_count {
        return Err(SolveError::InvalidState(format!(
            "graph was built for {} objects, got {}",
            graph.object_count,
            objects.len()
        )));
    }
    let outcome = minimize(graph, graph.initial_state(), config)?;
    let mut out = objects.to_vec();
    let mut refined = vec![false; objects.len()];
    for (k, v) in graph.vertices.iter().enumerate() {
        refined[v.object] = true;
        // an untouched state leaves the object bit-identical
        if outcome.iterations == 0 {
            continue;
        }
        let o = VERTEX_DIM * k;
        let obj = &mut out[v.object];
        obj.offset = FeaturePoint::new(
            outcome.state[o] - obj.keypoint.u,
            outcome.state[o + 1] - obj.keypoint.v,
        );
        obj.depth = outcome.state[o + 2];
    }
    Ok(Solution {
        objects: out,
        refined,
        diagnostics: Diagnostics {
            vertices: graph.vertices.len(),
            edges: graph.edges.len(),
            initial_cost: outcome.initial_cost.as_f64(),
            final_cost: outcome.final_cost.as_f64(),
            iterations: outcome.iterations,
            converged: outcome.converged,
        },
    })
}

/// Builds the graph and solves it in one call.
pub fn refine<T: Real>(
    objects: &[ObjectHypothesis<T>],
    pairs: &[PairConstraint<T>],
    camera: &PinholeCamera<T>,
    config: &LmConfig,
) -> Result<Solution<T>, SolveError<T>> {
    let graph = build_graph_with(
        objects,
        pairs,
        camera,
        config.weight_rule,
        T::lit(config.max_weight),
    )?;
    solve(&graph, objects, config)
}
