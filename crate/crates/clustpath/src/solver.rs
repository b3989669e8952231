//! Exact convex clustering solvers.
//!
//! `admm_solve` runs the three-step ADMM update to convergence at a fixed
//! regularization level:
//!
//! ```text
//!   U <- (I + rho D^T D)^{-1} (X + rho D^T (V - Z))
//!   V <- prox_{(lambda/rho) P(.; w, q)} (D U + Z)
//!   Z <- Z + D U - V
//! ```
//!
//! `admm_grid_path` warm-starts that solve along a multiplicative grid of
//! lambda values until the path reaches full fusion, and `ama_solve`
//! offers the lighter AMA update (no linear solve) for cross-checking.
//! The single ADMM update is shared verbatim with the algorithmically
//! regularized paths in [`crate::carp`].

use ndarray::Array2;
use serde::Serialize;

use crate::dataio::{format_float, DataMatrix};
use crate::error::{Error, Result};
use crate::prox::{penalty_value, prox_penalty, zero_mask, PenaltySpec};
use crate::weights::WeightGraph;

/// Default convergence tolerance on the relative change in `U`.
pub const DEFAULT_TOL: f64 = 1e-7;
/// Default iteration budget for a single regularization level.
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Default AMA dual step size (weights are rescaled to max 1).
pub const DEFAULT_AMA_STEP: f64 = 0.1;

const DIVERGENCE_FACTOR: f64 = 1e8;

/// Iterate of the splitting solvers: centroid estimates, per-edge
/// difference splits, and scaled duals, plus convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Current centroid estimate `U`, one row per observation.
    pub centroids: Array2<f64>,
    /// Split variable `V`, one row per edge.
    pub splits: Array2<f64>,
    /// Dual variable `Z`, one row per edge.
    pub duals: Array2<f64>,
    /// Iterations taken since this state was initialized.
    pub iterations: usize,
    /// Whether the last solve met its tolerance.
    pub converged: bool,
    /// Relative change in `U` at the last iteration.
    pub last_rel_change: f64,
}

impl SolverState {
    /// Standard initialization `U = X`, `V = Z = D X`.
    pub fn init(data: &DataMatrix, graph: &WeightGraph) -> Self {
        let dx = graph.apply_difference(&data.values);
        Self {
            centroids: data.values.clone(),
            splits: dx.clone(),
            duals: dx,
            iterations: 0,
            converged: false,
            last_rel_change: f64::INFINITY,
        }
    }

    pub(crate) fn validate(&self, data: &DataMatrix, graph: &WeightGraph) -> Result<()> {
        let (n, p) = data.values.dim();
        let e = graph.num_edges();
        if self.centroids.dim() != (n, p) {
            return Err(Error::Shape(format!(
                "centroids have shape {:?}, expected ({n}, {p})",
                self.centroids.dim()
            )));
        }
        if self.splits.dim() != (e, p) || self.duals.dim() != (e, p) {
            return Err(Error::Shape(format!(
                "splits/duals have shapes {:?}/{:?}, expected ({e}, {p})",
                self.splits.dim(),
                self.duals.dim()
            )));
        }
        Ok(())
    }

    /// Exact-zero mask of the split rows (fused edges).
    pub fn fused_mask(&self) -> Vec<bool> {
        zero_mask(&self.splits)
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn rel_change(current: &Array2<f64>, previous: &Array2<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in current.iter().zip(previous.iter()) {
        let d = a - b;
        num += d * d;
        den += b * b;
    }
    num.sqrt() / den.sqrt().max(1.0)
}

fn row_norms(m: &Array2<f64>) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .collect()
}

/// One ADMM triplet. Returns the Euclidean norms of the prox argument
/// rows (`D U + Z`), which the path algorithms use to order simultaneous
/// fusions.
pub(crate) fn admm_iterate(
    state: &mut SolverState,
    x: &Array2<f64>,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    threshold_base: f64,
) -> Result<Vec<f64>> {
    let rho = graph.rho();
    let vz = &state.splits - &state.duals;
    let rhs = x + &(graph.apply_difference_transpose(&vz) * rho);
    state.centroids = graph.solve_shifted(&rhs);

    let mut arg = graph.apply_difference(&state.centroids);
    arg += &state.duals;
    let margins = row_norms(&arg);
    state.splits = prox_penalty(&arg, threshold_base, spec)?;
    state.duals = &arg - &state.splits;
    state.iterations += 1;

    if state.centroids.iter().any(|v| !v.is_finite())
        || state.duals.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Numerical(format!(
            "non-finite value at iterate {}",
            state.iterations
        )));
    }
    Ok(margins)
}

pub(crate) fn validate_problem(
    graph: &WeightGraph,
    spec: &PenaltySpec,
    data: &DataMatrix,
) -> Result<()> {
    if graph.n() != data.n() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes for {} observations",
            graph.n(),
            data.n()
        )));
    }
    if spec.weights.len() != graph.num_edges() {
        return Err(Error::Length(format!(
            "{} penalty weights for {} edges",
            spec.weights.len(),
            graph.num_edges()
        )));
    }
    Ok(())
}

/// Solves the convex clustering problem at a single `lambda` by ADMM.
///
/// Stops when the relative change in `U` drops below `tol`. Hitting
/// `max_iter` is not an error: the returned state carries
/// `converged = false` and a warning is logged.
pub fn admm_solve(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    lambda: f64,
    init: Option<SolverState>,
    tol: f64,
    max_iter: usize,
) -> Result<SolverState> {
    validate_problem(graph, spec, data)?;
    if !(lambda > 0.0) {
        return Err(Error::Range(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Range(format!("tol must be positive, got {tol}")));
    }
    let mut state = match init {
        Some(s) => {
            s.validate(data, graph)?;
            s
        }
        None => SolverState::init(data, graph),
    };
    state.converged = false;
    let threshold = lambda / graph.rho();
    for _ in 0..max_iter {
        let prev = state.centroids.clone();
        admm_iterate(&mut state, &data.values, graph, spec, threshold)?;
        state.last_rel_change = rel_change(&state.centroids, &prev);
        if state.last_rel_change < tol {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        log::warn!(
            "ADMM stopped at max_iter = {max_iter} with relative change {:.3e} (tol {tol:.3e})",
            state.last_rel_change
        );
    }
    Ok(state)
}

/// Solves the same problem by AMA (proximal gradient on the dual):
///
/// ```text
///   U <- X - D^T Z
///   V <- prox_{(lambda/step) P} (D U + Z / step)
///   Z <- Z + step * (D U - V)
/// ```
///
/// `step` defaults to [`DEFAULT_AMA_STEP`]; too large a step makes the
/// dual ascent diverge, which is caught and reported as an error.
pub fn ama_solve(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    lambda: f64,
    init: Option<SolverState>,
    step: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolverState> {
    validate_problem(graph, spec, data)?;
    if !(lambda > 0.0) {
        return Err(Error::Range(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Range(format!("tol must be positive, got {tol}")));
    }
    let step = step.unwrap_or(DEFAULT_AMA_STEP);
    if !(step > 0.0) {
        return Err(Error::Range(format!("step must be positive, got {step}")));
    }

    let mut state = match init {
        Some(s) => {
            s.validate(data, graph)?;
            s
        }
        None => {
            let mut s = SolverState::init(data, graph);
            s.duals.fill(0.0);
            s
        }
    };
    state.converged = false;
    let x = &data.values;
    let scale = 1.0 + frobenius(x);
    let threshold = lambda / step;
    for _ in 0..max_iter {
        let prev = state.centroids.clone();
        state.centroids = x - &graph.apply_difference_transpose(&state.duals);
        let du = graph.apply_difference(&state.centroids);
        let arg = &du + &(&state.duals / step);
        state.splits = prox_penalty(&arg, threshold, spec)?;
        state.duals += &(&(&du - &state.splits) * step);
        state.iterations += 1;

        if !frobenius(&state.centroids).is_finite()
            || frobenius(&state.centroids) > DIVERGENCE_FACTOR * scale
        {
            return Err(Error::Divergence(format!(
                "AMA iterates exploded at iteration {} (step {step} too large)",
                state.iterations
            )));
        }
        state.last_rel_change = rel_change(&state.centroids, &prev);
        if state.last_rel_change < tol {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        log::warn!(
            "AMA stopped at max_iter = {max_iter} with relative change {:.3e} (tol {tol:.3e})",
            state.last_rel_change
        );
    }
    Ok(state)
}

/// Value of the full objective at centroid matrix `u`.
pub fn objective(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    u: &Array2<f64>,
    lambda: f64,
) -> f64 {
    let mut fit = 0.0;
    for (a, b) in data.values.iter().zip(u.iter()) {
        let d = a - b;
        fit += d * d;
    }
    0.5 * fit + lambda * penalty_value(&graph.apply_difference(u), spec)
}

/// Convergence record for one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct GridConvergence {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Solutions of an exact solver along a multiplicative lambda grid.
#[derive(Debug, Clone)]
pub struct GridPathResult {
    pub lambdas: Vec<f64>,
    pub solutions: Vec<Array2<f64>>,
    pub convergence: Vec<GridConvergence>,
    /// Row cluster count at each grid point (components of fused edges).
    pub cluster_counts: Vec<usize>,
    /// Column cluster counts, present only for bi-clustering grids.
    pub col_cluster_counts: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct GridPathJson<'a> {
    lambdas: &'a [f64],
    n: usize,
    p: usize,
    /// Row-major flattened `U` per grid point.
    solutions: Vec<&'a [f64]>,
    convergence: &'a [GridConvergence],
    cluster_counts: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    col_cluster_counts: Option<&'a Vec<usize>>,
}

impl GridPathResult {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let (n, p) = self.solutions.first().map(|s| s.dim()).unwrap_or((0, 0));
        let json = GridPathJson {
            lambdas: &self.lambdas,
            n,
            p,
            solutions: self
                .solutions
                .iter()
                .map(|s| s.as_slice().expect("solutions are standard layout"))
                .collect(),
            convergence: &self.convergence,
            cluster_counts: &self.cluster_counts,
            col_cluster_counts: self.col_cluster_counts.as_ref(),
        };
        serde_json::to_string_pretty(&json).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// One CSV row per (grid point, observation) pair.
    pub fn write_solutions_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let p = self.solutions.first().map(|s| s.ncols()).unwrap_or(0);
        let mut header = vec!["lambda_index".to_string(), "lambda".to_string(), "row".to_string()];
        header.extend((0..p).map(|j| format!("v{j}")));
        writer.write_record(&header)?;
        for (idx, (lambda, u)) in self.lambdas.iter().zip(&self.solutions).enumerate() {
            for (row, r) in u.rows().into_iter().enumerate() {
                let mut record = vec![idx.to_string(), format_float(*lambda), row.to_string()];
                record.extend(r.iter().map(|v| format_float(*v)));
                writer.write_record(&record)?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

const MAX_GRID_POINTS: usize = 1_000_000;

/// Warm-started ADMM along the grid `epsilon, epsilon * t, ...` until a
/// converged solution has every edge fused.
pub fn admm_grid_path(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    epsilon: f64,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GridPathResult> {
    validate_problem(graph, spec, data)?;
    if !(epsilon > 0.0) {
        return Err(Error::Range(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(t > 1.0) {
        return Err(Error::Range(format!("t must exceed 1, got {t}")));
    }

    let mut result = GridPathResult {
        lambdas: Vec::new(),
        solutions: Vec::new(),
        convergence: Vec::new(),
        cluster_counts: Vec::new(),
        col_cluster_counts: None,
    };
    let mut state = SolverState::init(data, graph);
    let mut lambda = epsilon;
    loop {
        let start_iterations = state.iterations;
        state = admm_solve(data, graph, spec, lambda, Some(state), tol, max_iter)?;
        let mask = state.fused_mask();
        result.lambdas.push(lambda);
        result.solutions.push(state.centroids.clone());
        result.convergence.push(GridConvergence {
            iterations: state.iterations - start_iterations,
            residual: state.last_rel_change,
            converged: state.converged,
        });
        result.cluster_counts.push(graph.component_count(&mask));

        if state.converged && mask.iter().all(|&f| f) {
            return Ok(result);
        }
        if result.lambdas.len() >= MAX_GRID_POINTS {
            return Err(Error::IterationCap(format!(
                "grid exceeded {MAX_GRID_POINTS} points without full fusion"
            )));
        }
        lambda *= t;
        if !lambda.is_finite() {
            return Err(Error::Numerical("lambda overflowed along the grid".into()));
        }
    }
}

/// Grid multiplier that spaces `points` values from `epsilon` to
/// `lambda_max` multiplicatively.
pub fn grid_multiplier(epsilon: f64, lambda_max: f64, points: usize) -> Result<f64> {
    if !(epsilon > 0.0) || !(lambda_max > epsilon) {
        return Err(Error::Range(format!(
            "need 0 < epsilon < lambda_max, got {epsilon} and {lambda_max}"
        )));
    }
    if points < 2 {
        return Err(Error::Range("need at least 2 grid points".into()));
    }
    Ok((lambda_max / epsilon).powf(1.0 / (points as f64 - 1.0)))
}
