//! Levenberg-Marquardt on dense normal equations.

use crate::scalar::Real;
use crate::uncertainty::WeightRule;

use super::graph::{ConstraintGraph, VERTEX_DIM};
use super::linalg::{cholesky_solve, DenseMatrix};
use super::SolveError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub initial_lambda: f64,
    /// Damping multiplier on a rejected step; divisor on an accepted one.
    pub lambda_factor: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    /// Steps that would put any depth at or below this are halved.
    pub min_depth: f64,
    pub max_step_halvings: usize,
    /// Ceiling on any weight.
    pub max_weight: f64,
    pub weight_rule: WeightRule,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            lambda_factor: 10.0,
            max_iterations: 100,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-10,
            min_depth: 1e-3,
            max_step_halvings: 40,
            max_weight: crate::uncertainty::DEFAULT_MAX_WEIGHT,
            weight_rule: WeightRule::InverseSigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome<T> {
    pub state: Vec<T>,
    pub initial_cost: T,
    pub final_cost: T,
    pub iterations: usize,
    pub converged: bool,
}

fn damped<T: Real>(jtj: &DenseMatrix<T>, lambda: T) -> DenseMatrix<T> {
    let mut a = jtj.clone();
    for i in 0..a.rows() {
        let d = jtj.get(i, i);
        // Marquardt scaling, with a floor so zero-curvature columns still damp
        a.set(i, i, d + lambda * d.max(T::lit(1e-12)));
    }
    a
}

fn depth_feasible<T: Real>(state: &[T], step: &[T], min_depth: T) -> bool {
    state
        .iter()
        .zip(step)
        .skip(2)
        .step_by(VERTEX_DIM)
        .all(|(z, dz)| *z + *dz > min_depth)
}

pub fn minimize<T: Real>(
    graph: &ConstraintGraph<T>,
    start: Vec<T>,
    config: &LmConfig,
) -> Result<LmOutcome<T>, SolveError<T>> {
    let mut state = start;
    let mut residuals = graph.residuals(&state)?;
    let mut cost: T = residuals.iter().map(|r| *r * *r).sum();
    if !cost.is_finite() {
        return Err(SolveError::Diverged {
            iterations: 0,
            last_state: state,
            last_cost: cost,
        });
    }
    let initial_cost = cost;
    let mut outcome = LmOutcome {
        state: Vec::new(),
        initial_cost,
        final_cost: cost,
        iterations: 0,
        converged: false,
    };
    if cost == T::zero() || graph.is_empty() {
        outcome.state = state;
        outcome.converged = true;
        return Ok(outcome);
    }

    let factor = T::lit(config.lambda_factor);
    let min_depth = T::lit(config.min_depth);
    let mut lambda = T::lit(config.initial_lambda);
    let mut jacobian = graph.jacobian(&state)?;
    let (mut jtj, mut jtr) = jacobian.normal_equations(&residuals);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        iterations += 1;
        let rhs: Vec<T> = jtr.iter().map(|g| -*g).collect();
        let Some(mut step) = cholesky_solve(&damped(&jtj, lambda), &rhs) else {
            lambda *= factor;
            continue;
        };
        let step_norm = step.iter().map(|s| *s * *s).sum::<T>().sqrt();
        if step_norm < T::lit(config.step_tolerance) {
            converged = true;
            break;
        }
        let mut halvings = 0;
        while !depth_feasible(&state, &step, min_depth) && halvings < config.max_step_halvings {
            step.iter_mut().for_each(|s| *s *= T::lit(0.5));
            halvings += 1;
        }
        if !depth_feasible(&state, &step, min_depth) {
            lambda *= factor;
            continue;
        }
        let trial: Vec<T> = state.iter().zip(&step).map(|(x, s)| *x + *s).collect();
        let trial_residuals = graph.residuals(&trial)?;
        let trial_cost: T = trial_residuals.iter().map(|r| *r * *r).sum();
        if !trial_cost.is_finite() {
            return Err(SolveError::Diverged {
                iterations,
                last_state: state,
                last_cost: cost,
            });
        }
        if trial_cost < cost {
            let relative = (cost - trial_cost) / cost;
            state = trial;
            residuals = trial_residuals;
            cost = trial_cost;
            lambda = (lambda / factor).max(T::lit(1e-15));
            if relative < T::lit(config.cost_tolerance) || cost == T::zero() {
                converged = true;
                break;
            }
            jacobian = graph.jacobian(&state)?;
            (jtj, jtr) = jacobian.normal_equations(&residuals);
        } else {
            lambda *= factor;
            if !lambda.is_finite() {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
        }
    }

    outcome.state = state;
    outcome.final_cost = cost;
    outcome.iterations = iterations;
    outcome.converged = converged;
    Ok(outcome)
}
