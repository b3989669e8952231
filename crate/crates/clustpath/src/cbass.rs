//! Convex bi-clustering: exact solutions and algorithmic regularization.
//!
//! Bi-clustering penalizes differences between rows and between columns of
//! the centroid matrix at the same time, producing checkerboard-structured
//! estimates. The composite penalty has no closed-form prox, so exact
//! solutions alternate row- and column-clustering prox evaluations in a
//! Dykstra-like scheme ([`dlpa_grid_path`]). The one-step path analogue
//! ([`cbass_path`]) embeds a single ADMM triplet for each side per penalty
//! level and carries every auxiliary variable forward across levels.

use ndarray::Array2;

use crate::carp::{CarpPath, FusionEvent, FusionKind, PathConfig, PathIterate};
use crate::dataio::DataMatrix;
use crate::error::{Error, Result};
use crate::prox::{zero_mask, PenaltySpec};
use crate::solver::{self, GridConvergence, GridPathResult, SolverState};
use crate::weights::WeightGraph;

/// Default multiplicative step for bi-clustering paths.
pub const DEFAULT_T_CBASS: f64 = 1.01;

const MAX_GRID_POINTS: usize = 1_000_000;

/// Iterate of the bi-clustering schemes: the centroid estimate, the two
/// Dykstra correction matrices, and split/dual pairs for both graphs.
#[derive(Debug, Clone)]
pub struct BiClusterState {
    /// Current centroid estimate, `n x p`.
    pub u: Array2<f64>,
    /// Row-phase correction matrix, `n x p`.
    pub p: Array2<f64>,
    /// Column-phase correction matrix, `n x p`.
    pub q: Array2<f64>,
    /// Row splits, one row per row-graph edge.
    pub v_row: Array2<f64>,
    /// Row duals, same shape as `v_row`.
    pub z_row: Array2<f64>,
    /// Column splits over the transposed data, one row per column-graph edge.
    pub v_col: Array2<f64>,
    /// Column duals, same shape as `v_col`.
    pub z_col: Array2<f64>,
}

impl BiClusterState {
    /// Standard initialization: `U = X`, corrections zero, each split/dual
    /// pair at the respective difference of the data.
    pub fn init(data: &DataMatrix, row_graph: &WeightGraph, col_graph: &WeightGraph) -> Self {
        let xt = data.values.t().to_owned();
        Self {
            u: data.values.clone(),
            p: Array2::zeros(data.values.dim()),
            q: Array2::zeros(data.values.dim()),
            v_row: row_graph.apply_difference(&data.values),
            z_row: row_graph.apply_difference(&data.values),
            v_col: col_graph.apply_difference(&xt),
            z_col: col_graph.apply_difference(&xt),
        }
    }

    pub fn validate(&self, row_graph: &WeightGraph, col_graph: &WeightGraph) -> Result<()> {
        let (n, p) = (row_graph.n(), col_graph.n());
        for (name, m) in [("u", &self.u), ("p", &self.p), ("q", &self.q)] {
            if m.dim() != (n, p) {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected ({n}, {p})",
                    m.dim()
                )));
            }
        }
        let er = row_graph.num_edges();
        if self.v_row.dim() != (er, p) || self.z_row.dim() != (er, p) {
            return Err(Error::Shape(format!(
                "row splits/duals have shapes {:?}/{:?}, expected ({er}, {p})",
                self.v_row.dim(),
                self.z_row.dim()
            )));
        }
        let ec = col_graph.num_edges();
        if self.v_col.dim() != (ec, n) || self.z_col.dim() != (ec, n) {
            return Err(Error::Shape(format!(
                "column splits/duals have shapes {:?}/{:?}, expected ({ec}, {n})",
                self.v_col.dim(),
                self.z_col.dim()
            )));
        }
        Ok(())
    }

    /// Exact-zero mask of the row split rows.
    pub fn fused_rows(&self) -> Vec<bool> {
        zero_mask(&self.v_row)
    }

    /// Exact-zero mask of the column split rows.
    pub fn fused_cols(&self) -> Vec<bool> {
        zero_mask(&self.v_col)
    }
}

/// A computed bi-clustering path: per-side event paths sharing one penalty
/// ladder, plus the final centroid matrix.
#[derive(Debug, Clone)]
pub struct CbassPath {
    /// Row-side path; iterates hold `U` snapshots.
    pub row_path: CarpPath,
    /// Column-side path; iterates hold transposed snapshots.
    pub col_path: CarpPath,
    /// Centroids at the end of the path (grand-mean entries).
    pub final_u: Array2<f64>,
}

fn validate_cbass(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
) -> Result<()> {
    if row_graph.n() != data.n() {
        return Err(Error::Dimension(format!(
            "row graph has {} nodes for {} observations",
            row_graph.n(),
            data.n()
        )));
    }
    if col_graph.n() != data.p() {
        return Err(Error::Dimension(format!(
            "column graph has {} nodes for {} features",
            col_graph.n(),
            data.p()
        )));
    }
    if row_spec.weights.len() != row_graph.num_edges() {
        return Err(Error::Length(format!(
            "{} row penalty weights for {} edges",
            row_spec.weights.len(),
            row_graph.num_edges()
        )));
    }
    if col_spec.weights.len() != col_graph.num_edges() {
        return Err(Error::Length(format!(
            "{} column penalty weights for {} edges",
            col_spec.weights.len(),
            col_graph.num_edges()
        )));
    }
    Ok(())
}

/// Initial penalty level covering both penalty terms:
/// `1e-6 * max_l ||(D X)_l|| / min_l w_l` with the max and min taken over
/// the union of row and column edges.
pub fn cbass_auto_epsilon(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
) -> Result<f64> {
    validate_cbass(data, row_graph, col_graph, row_spec, col_spec)?;
    let mut max_row = 0.0_f64;
    for m in [
        row_graph.apply_difference(&data.values),
        col_graph.apply_difference(&data.values.t().to_owned()),
    ] {
        for r in m.rows() {
            max_row = max_row.max(r.dot(&r).sqrt());
        }
    }
    if max_row <= 0.0 {
        return Err(Error::Degenerate(
            "no penalty scale: the graphs have no edges or every connected pair coincides".into(),
        ));
    }
    let min_w = row_spec
        .weights
        .iter()
        .chain(col_spec.weights.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(1e-6 * max_row / min_w)
}

struct StepMargins {
    row: Vec<f64>,
    col: Vec<f64>,
}

/// One ADMM triplet on `x` reusing existing split/dual pairs; returns the
/// new centroid estimate and the prox margins.
fn phase(
    x: &Array2<f64>,
    v: &mut Array2<f64>,
    z: &mut Array2<f64>,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    threshold_base: f64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut st = SolverState {
        centroids: Array2::zeros(x.dim()),
        splits: std::mem::take(v),
        duals: std::mem::take(z),
        iterations: 0,
        converged: false,
        last_rel_change: f64::INFINITY,
    };
    let result = solver::admm_iterate(&mut st, x, graph, spec, threshold_base);
    *v = st.splits;
    *z = st.duals;
    result.map(|margins| (st.centroids, margins))
}

fn step_in_place(
    state: &mut BiClusterState,
    gamma: f64,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
) -> Result<StepMargins> {
    let x_row = &state.u + &state.p;
    let (t, row_margins) = phase(
        &x_row,
        &mut state.v_row,
        &mut state.z_row,
        row_graph,
        row_spec,
        gamma / row_graph.rho(),
    )?;
    state.p = &state.p + &state.u - &t;

    let x_col = (&t + &state.q).t().to_owned();
    let (s, col_margins) = phase(
        &x_col,
        &mut state.v_col,
        &mut state.z_col,
        col_graph,
        col_spec,
        gamma / col_graph.rho(),
    )?;
    state.u = s.t().to_owned();
    state.q = &state.q + &t - &state.u;
    Ok(StepMargins {
        row: row_margins,
        col: col_margins,
    })
}

/// One path step: a row-clustering triplet on `U + P` followed by a
/// column-clustering triplet on the transposed `T + Q`, with the Dykstra
/// corrections updated in between. Corrections are carried, never reset.
pub fn cbass_step(
    state: &BiClusterState,
    gamma: f64,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
) -> Result<BiClusterState> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Range(format!(
            "gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    state.validate(row_graph, col_graph)?;
    if row_spec.weights.len() != row_graph.num_edges()
        || col_spec.weights.len() != col_graph.num_edges()
    {
        return Err(Error::Length(
            "penalty weights do not match the graph edge counts".into(),
        ));
    }
    let mut next = state.clone();
    step_in_place(&mut next, gamma, row_graph, col_graph, row_spec, col_spec)?;
    Ok(next)
}

/// One-step-per-level bi-clustering path.
///
/// Starts at `U = X` with level `epsilon` and takes one [`cbass_step`] per
/// level until every row and column split row is exactly zero. Fusion events
/// are tracked independently per side; both sides share the penalty ladder.
/// The terminal iterate is polished at the final level so `final_u` holds the
/// fully fused solution.
pub fn cbass_path(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
    config: &PathConfig,
) -> Result<CbassPath> {
    run_cbass(data, row_graph, col_graph, row_spec, col_spec, config, false)
}

/// Back-tracking bi-clustering path.
///
/// Same back-tracking engine as the clustering variant, triggered by the
/// combined count of new row and column fusions: an accepted step fuses at
/// most one new edge across both sides unless the halving budget runs out.
pub fn cbass_viz_path(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
    config: &PathConfig,
) -> Result<CbassPath> {
    run_cbass(data, row_graph, col_graph, row_spec, col_spec, config, true)
}

fn count_new(now: &[bool], was: &[bool]) -> usize {
    now.iter().zip(was).filter(|(n, w)| **n && !**w).count()
}

#[allow(clippy::too_many_arguments)]
fn push_events(
    events: &mut Vec<FusionEvent>,
    graph: &WeightGraph,
    now: &[bool],
    was: &[bool],
    margins: &[f64],
    gamma: f64,
    step: usize,
    exhausted: bool,
) {
    for (l, e) in graph.edges().iter().enumerate() {
        if now[l] == was[l] {
            continue;
        }
        let kind = if now[l] {
            FusionKind::Fuse
        } else {
            FusionKind::Unfuse
        };
        events.push(FusionEvent {
            edge: l,
            from: e.from,
            to: e.to,
            gamma,
            iterate: step,
            kind,
            backtrack_exhausted: exhausted && kind == FusionKind::Fuse,
            prox_margin: margins[l],
        });
    }
}

fn run_cbass(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
    config: &PathConfig,
    viz: bool,
) -> Result<CbassPath> {
    config.validate()?;
    validate_cbass(data, row_graph, col_graph, row_spec, col_spec)?;
    let epsilon = match config.epsilon {
        Some(e) => e,
        None => cbass_auto_epsilon(data, row_graph, col_graph, row_spec, col_spec)?,
    };

    let mut state = BiClusterState::init(data, row_graph, col_graph);
    let mut fused_r = state.fused_rows();
    let mut fused_c = state.fused_cols();
    let mut gammas = vec![epsilon];
    let mut clusters_r = vec![row_graph.component_count(&fused_r)];
    let mut clusters_c = vec![col_graph.component_count(&fused_c)];
    let mut row_iterates = vec![PathIterate {
        index: 0,
        centroids: state.u.clone(),
        fused: fused_r.clone(),
    }];
    let mut col_iterates = vec![PathIterate {
        index: 0,
        centroids: state.u.t().to_owned(),
        fused: fused_c.clone(),
    }];
    let mut row_events: Vec<FusionEvent> = Vec::new();
    let mut col_events: Vec<FusionEvent> = Vec::new();

    let mut t_eff = if viz { config.burn_in_t } else { config.t };
    let mut step = 0usize;

    loop {
        if fused_r.iter().all(|&f| f) && fused_c.iter().all(|&f| f) {
            if step == 0 {
                break;
            }
            let gamma_last = *gammas.last().expect("ladder is nonempty");
            let (margins, intact) = polish_fused(
                &mut state, gamma_last, row_graph, col_graph, row_spec, col_spec,
            )?;
            let mask_r = state.fused_rows();
            let mask_c = state.fused_cols();
            let row_last = row_iterates.last_mut().expect("nonempty");
            row_last.centroids = state.u.clone();
            row_last.fused = mask_r.clone();
            let col_last = col_iterates.last_mut().expect("nonempty");
            col_last.centroids = state.u.t().to_owned();
            col_last.fused = mask_c.clone();
            if intact {
                break;
            }
            for (l, &was) in fused_r.iter().enumerate() {
                if was && !mask_r[l] {
                    let e = &row_graph.edges()[l];
                    row_events.push(FusionEvent {
                        edge: l,
                        from: e.from,
                        to: e.to,
                        gamma: gamma_last,
                        iterate: step,
                        kind: FusionKind::Unfuse,
                        backtrack_exhausted: false,
                        prox_margin: margins.row[l],
                    });
                }
            }
            for (l, &was) in fused_c.iter().enumerate() {
                if was && !mask_c[l] {
                    let e = &col_graph.edges()[l];
                    col_events.push(FusionEvent {
                        edge: l,
                        from: e.from,
                        to: e.to,
                        gamma: gamma_last,
                        iterate: step,
                        kind: FusionKind::Unfuse,
                        backtrack_exhausted: false,
                        prox_margin: margins.col[l],
                    });
                }
            }
            fused_r = mask_r;
            fused_c = mask_c;
            *clusters_r.last_mut().expect("nonempty") = row_graph.component_count(&fused_r);
            *clusters_c.last_mut().expect("nonempty") = col_graph.component_count(&fused_c);
            continue;
        }
        if step >= config.max_steps {
            return Err(Error::IterationCap(format!(
                "path did not fully fuse within {} steps",
                config.max_steps
            )));
        }

        let base_gamma = *gammas.last().expect("ladder is nonempty");
        let mut budget = config.max_backtrack;
        let (gamma, margins, new_r, new_c, exhausted) = loop {
            let gamma = base_gamma * t_eff;
            if !gamma.is_finite() {
                return Err(Error::Numerical(
                    "penalty level overflowed the floating-point range".into(),
                ));
            }
            let mut trial = state.clone();
            let margins =
                step_in_place(&mut trial, gamma, row_graph, col_graph, row_spec, col_spec)?;
            let trial_r = trial.fused_rows();
            let trial_c = trial.fused_cols();
            let new_fusions = count_new(&trial_r, &fused_r) + count_new(&trial_c, &fused_c);
            if !viz || new_fusions <= 1 {
                state = trial;
                break (gamma, margins, trial_r, trial_c, false);
            }
            if budget == 0 {
                state = trial;
                break (gamma, margins, trial_r, trial_c, true);
            }
            budget -= 1;
            t_eff = 1.0 + (t_eff - 1.0) / 2.0;
        };

        step += 1;
        push_events(
            &mut row_events, row_graph, &new_r, &fused_r, &margins.row, gamma, step, exhausted,
        );
        push_events(
            &mut col_events, col_graph, &new_c, &fused_c, &margins.col, gamma, step, exhausted,
        );
        let any_fusion = count_new(&new_r, &fused_r) + count_new(&new_c, &fused_c) > 0;
        let changed = new_r != fused_r || new_c != fused_c;
        fused_r = new_r;
        fused_c = new_c;
        gammas.push(gamma);
        clusters_r.push(row_graph.component_count(&fused_r));
        clusters_c.push(col_graph.component_count(&fused_c));
        if viz && any_fusion {
            t_eff = config.t;
        }
        if changed || step % config.thin == 0 {
            row_iterates.push(PathIterate {
                index: step,
                centroids: state.u.clone(),
                fused: fused_r.clone(),
            });
            col_iterates.push(PathIterate {
                index: step,
                centroids: state.u.t().to_owned(),
                fused: fused_c.clone(),
            });
        }
    }

    if row_iterates.last().map(|it| it.index) != Some(step) {
        row_iterates.push(PathIterate {
            index: step,
            centroids: state.u.clone(),
            fused: fused_r.clone(),
        });
        col_iterates.push(PathIterate {
            index: step,
            centroids: state.u.t().to_owned(),
            fused: fused_c.clone(),
        });
    }

    Ok(CbassPath {
        row_path: CarpPath {
            gammas: gammas.clone(),
            iterates: row_iterates,
            events: row_events,
            clusters_per_k: clusters_r,
        },
        col_path: CarpPath {
            gammas,
            iterates: col_iterates,
            events: col_events,
            clusters_per_k: clusters_c,
        },
        final_u: state.u,
    })
}

/// Fixed-level steps at the end of the path, turning the first fully fused
/// iterate into the exact fully fused solution.
fn polish_fused(
    state: &mut BiClusterState,
    gamma: f64,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
) -> Result<(StepMargins, bool)> {
    let mut margins = StepMargins {
        row: vec![0.0; row_graph.num_edges()],
        col: vec![0.0; col_graph.num_edges()],
    };
    for _ in 0..crate::carp::POLISH_MAX_ITER {
        let prev = state.u.clone();
        margins = step_in_place(state, gamma, row_graph, col_graph, row_spec, col_spec)?;
        if !(state.fused_rows().iter().all(|&f| f) && state.fused_cols().iter().all(|&f| f)) {
            return Ok((margins, false));
        }
        if solver::rel_change(&state.u, &prev) <= crate::carp::POLISH_TOL {
            return Ok((margins, true));
        }
    }
    log::warn!(
        "terminal polish hit its iteration cap before reaching {}",
        crate::carp::POLISH_TOL
    );
    Ok((margins, true))
}

/// Split/dual pairs carried across the grid for warm starts.
struct DlpaCarry {
    v_row: Array2<f64>,
    z_row: Array2<f64>,
    v_col: Array2<f64>,
    z_col: Array2<f64>,
}

impl DlpaCarry {
    fn init(data: &DataMatrix, row_graph: &WeightGraph, col_graph: &WeightGraph) -> Self {
        let xt = data.values.t().to_owned();
        Self {
            v_row: row_graph.apply_difference(&data.values),
            z_row: row_graph.apply_difference(&data.values),
            v_col: col_graph.apply_difference(&xt),
            z_col: col_graph.apply_difference(&xt),
        }
    }
}

fn internal_data(values: Array2<f64>) -> Result<DataMatrix> {
    DataMatrix::from_values(values)
        .map_err(|_| Error::Numerical("non-finite value in a DLPA iterate".into()))
}

/// Solves the bi-clustering problem at one `lambda` by alternating
/// row- and column-clustering subproblems, each solved to `tol` by ADMM.
/// `U`, `P`, `Q` restart from scratch; the split/dual carry is reused.
/// Returns the solution, the outer iteration count, the last relative
/// change, and whether the outer loop met `tol`.
fn dlpa_solve(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
    lambda: f64,
    carry: &mut DlpaCarry,
    tol: f64,
    max_iter: usize,
) -> Result<(Array2<f64>, usize, f64, bool)> {
    let mut u = data.values.clone();
    let mut p_corr = Array2::zeros(u.dim());
    let mut q_corr = Array2::zeros(u.dim());
    let mut t_warm = u.clone();
    let mut s_warm = u.t().to_owned();
    let mut residual = f64::INFINITY;

    for outer in 1..=max_iter {
        let prev_u = u.clone();

        let row_data = internal_data(&u + &p_corr)?;
        let row_init = SolverState {
            centroids: t_warm,
            splits: std::mem::take(&mut carry.v_row),
            duals: std::mem::take(&mut carry.z_row),
            iterations: 0,
            converged: false,
            last_rel_change: f64::INFINITY,
        };
        let row_solved = solver::admm_solve(
            &row_data, row_graph, row_spec, lambda, Some(row_init), tol, max_iter,
        )?;
        carry.v_row = row_solved.splits;
        carry.z_row = row_solved.duals;
        let t_mat = row_solved.centroids;
        p_corr = &p_corr + &u - &t_mat;

        let col_data = internal_data((&t_mat + &q_corr).t().to_owned())?;
        let col_init = SolverState {
            centroids: s_warm,
            splits: std::mem::take(&mut carry.v_col),
            duals: std::mem::take(&mut carry.z_col),
            iterations: 0,
            converged: false,
            last_rel_change: f64::INFINITY,
        };
        let col_solved = solver::admm_solve(
            &col_data, col_graph, col_spec, lambda, Some(col_init), tol, max_iter,
        )?;
        carry.v_col = col_solved.splits;
        carry.z_col = col_solved.duals;
        let s_mat = col_solved.centroids;
        u = s_mat.t().to_owned();
        q_corr = &q_corr + &t_mat - &u;
        t_warm = t_mat;
        s_warm = s_mat;

        residual = solver::rel_change(&u, &prev_u);
        if residual <= tol {
            return Ok((u, outer, residual, true));
        }
    }
    log::warn!("DLPA stopped at {max_iter} outer iterations with residual {residual:.3e}");
    Ok((u, max_iter, residual, false))
}

/// Exact bi-clustering solutions along the grid `epsilon, epsilon * t, ...`
/// until a converged solution has every row and column edge fused.
#[allow(clippy::too_many_arguments)]
pub fn dlpa_grid_path(
    data: &DataMatrix,
    row_graph: &WeightGraph,
    col_graph: &WeightGraph,
    row_spec: &PenaltySpec,
    col_spec: &PenaltySpec,
    epsilon: f64,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GridPathResult> {
    validate_cbass(data, row_graph, col_graph, row_spec, col_spec)?;
    if !(epsilon > 0.0) {
        return Err(Error::Range(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(t > 1.0) {
        return Err(Error::Range(format!("t must exceed 1, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Range(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Range("max_iter must be at least 1".into()));
    }

    let mut result = GridPathResult {
        lambdas: Vec::new(),
        solutions: Vec::new(),
        convergence: Vec::new(),
        cluster_counts: Vec::new(),
        col_cluster_counts: Some(Vec::new()),
    };
    let mut carry = DlpaCarry::init(data, row_graph, col_graph);
    let mut lambda = epsilon;
    loop {
        let (u, iterations, residual, converged) = dlpa_solve(
            data, row_graph, col_graph, row_spec, col_spec, lambda, &mut carry, tol, max_iter,
        )?;
        let mask_r = zero_mask(&carry.v_row);
        let mask_c = zero_mask(&carry.v_col);
        result.lambdas.push(lambda);
        result.solutions.push(u);
        result.convergence.push(GridConvergence {
            iterations,
            residual,
            converged,
        });
        result.cluster_counts.push(row_graph.component_count(&mask_r));
        result
            .col_cluster_counts
            .as_mut()
            .expect("initialized above")
            .push(col_graph.component_count(&mask_c));

        if converged && mask_r.iter().all(|&f| f) && mask_c.iter().all(|&f| f) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carp;
    use crate::dataio::{gen_checkerboard, gen_gaussian_mixture};
    use crate::prox::Norm;
    use crate::weights::{default_k_neighbors, KernelScale};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn graphs_for(data: &DataMatrix) -> (WeightGraph, WeightGraph, PenaltySpec, PenaltySpec) {
        let row =
            WeightGraph::build(data, default_k_neighbors(data.n()), KernelScale::Auto).unwrap();
        let dt = DataMatrix::from_values(data.values.t().to_owned()).unwrap();
        let col = WeightGraph::build(&dt, default_k_neighbors(dt.n()), KernelScale::Auto).unwrap();
        let row_spec = PenaltySpec::from_graph(&row, Norm::L2);
        let col_spec = PenaltySpec::from_graph(&col, Norm::L2);
        (row, col, row_spec, col_spec)
    }

    fn distinct_values(u: &Array2<f64>, tol: f64) -> usize {
        let mut v: Vec<f64> = u.iter().cloned().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        1 + v.windows(2).filter(|w| w[1] - w[0] > tol).count()
    }

    #[test]
    fn empty_column_graph_reduces_to_plain_clustering() {
        let (data, _) = gen_gaussian_mixture(2, 5, 3, 10.0, 21).unwrap();
        let row_graph =
            WeightGraph::build(&data, default_k_neighbors(data.n()), KernelScale::Auto).unwrap();
        let row_spec = PenaltySpec::from_graph(&row_graph, Norm::L2);
        let col_graph = WeightGraph::trivial(data.p(), 1.0).unwrap();
        let col_spec = PenaltySpec::new(Norm::L2, Vec::new()).unwrap();
        let config = PathConfig::default();

        let bi = cbass_path(&data, &row_graph, &col_graph, &row_spec, &col_spec, &config).unwrap();
        let plain = carp::carp_path(&data, &row_graph, &row_spec, &config).unwrap();

        assert_eq!(bi.row_path.gammas.len(), plain.gammas.len());
        for (a, b) in bi.row_path.gammas.iter().zip(&plain.gammas) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(bi.row_path.events.len(), plain.events.len());
        for (a, b) in bi.row_path.events.iter().zip(&plain.events) {
            assert_eq!((a.edge, a.iterate, a.kind), (b.edge, b.iterate, b.kind));
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
        }
        assert!(bi.col_path.events.is_empty());
        assert!(bi.col_path.clusters_per_k.iter().all(|&c| c == data.p()));
        assert_eq!(bi.row_path.iterates.len(), plain.iterates.len());
        for (a, b) in bi.row_path.iterates.iter().zip(&plain.iterates) {
            assert_eq!(a.index, b.index);
            let diff = (&a.centroids - &b.centroids)
                .iter()
                .map(|d| d.abs())
                .fold(0.0_f64, f64::max);
            assert!(diff <= 1e-12, "iterate {} differs by {diff:.3e}", a.index);
        }
    }

    #[test]
    fn empty_column_graph_keeps_q_zero() {
        let (data, _) = gen_gaussian_mixture(2, 4, 3, 8.0, 2).unwrap();
        let row_graph =
            WeightGraph::build(&data, default_k_neighbors(data.n()), KernelScale::Auto).unwrap();
        let row_spec = PenaltySpec::from_graph(&row_graph, Norm::L2);
        let col_graph = WeightGraph::trivial(data.p(), 1.0).unwrap();
        let col_spec = PenaltySpec::new(Norm::L2, Vec::new()).unwrap();

        let mut state = BiClusterState::init(&data, &row_graph, &col_graph);
        for k in 0..5 {
            state = cbass_step(
                &state,
                1e-4 * (k as f64 + 1.0),
                &row_graph,
                &col_graph,
                &row_spec,
                &col_spec,
            )
            .unwrap();
            assert!(state.q.iter().all(|&v| v == 0.0), "q drifted at step {k}");
            // P compensates the row smoothing exactly: U + P returns to X.
            let back = (&state.u + &state.p - &data.values)
                .iter()
                .map(|d| d.abs())
                .fold(0.0_f64, f64::max);
            assert!(back <= 1e-12);
        }
    }

    #[test]
    fn first_step_commutes_with_transposition() {
        let (data, _, _) = gen_checkerboard(2, 2, 3, 3, 3.0, 0.1, 9).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let data_t = DataMatrix::from_values(data.values.t().to_owned()).unwrap();

        let state = BiClusterState::init(&data, &row_graph, &col_graph);
        let state_t = BiClusterState::init(&data_t, &col_graph, &row_graph);
        let gamma = 0.05;
        let a = cbass_step(&state, gamma, &row_graph, &col_graph, &row_spec, &col_spec).unwrap();
        let b = cbass_step(&state_t, gamma, &col_graph, &row_graph, &col_spec, &row_spec).unwrap();

        let diff = (&a.u - &b.u.t())
            .iter()
            .map(|d| d.abs())
            .fold(0.0_f64, f64::max);
        assert!(diff <= 1e-12, "one-step transpose mismatch {diff:.3e}");
    }

    #[test]
    fn path_is_transpose_symmetric() {
        let (data, _, _) = gen_checkerboard(2, 2, 3, 3, 3.0, 0.05, 4).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let data_t = DataMatrix::from_values(data.values.t().to_owned()).unwrap();
        let config = PathConfig { t: 1.02, ..PathConfig::default() };

        let a = cbass_path(&data, &row_graph, &col_graph, &row_spec, &col_spec, &config).unwrap();
        let b = cbass_path(&data_t, &col_graph, &row_graph, &col_spec, &row_spec, &config)
            .unwrap();

        assert_eq!(a.row_path.gammas.len(), b.row_path.gammas.len());
        for (x, y) in a.row_path.gammas.iter().zip(&b.row_path.gammas) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
        let pairs = |p: &CarpPath| -> Vec<(usize, FusionKind)> {
            p.events.iter().map(|e| (e.edge, e.kind)).collect()
        };
        assert_eq!(pairs(&a.row_path), pairs(&b.col_path));
        assert_eq!(pairs(&a.col_path), pairs(&b.row_path));
        let diff = (&a.final_u - &b.final_u.t())
            .iter()
            .map(|d| d.abs())
            .fold(0.0_f64, f64::max);
        assert!(diff <= 1e-12, "final transpose mismatch {diff:.3e}");
    }

    #[test]
    fn path_ends_at_the_grand_mean() {
        let (data, _, _) = gen_checkerboard(2, 2, 4, 3, 2.0, 0.1, 13).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let config = PathConfig::default();
        let path =
            cbass_path(&data, &row_graph, &col_graph, &row_spec, &col_spec, &config).unwrap();

        let mean = data.values.iter().sum::<f64>() / (data.n() * data.p()) as f64;
        for v in path.final_u.iter() {
            assert_relative_eq!(*v, mean, epsilon = 1e-6);
        }
        assert_eq!(*path.row_path.clusters_per_k.last().unwrap(), 1);
        assert_eq!(*path.col_path.clusters_per_k.last().unwrap(), 1);

        // Every edge on each side ends fused exactly once, net.
        for (path, graph) in [(&path.row_path, &row_graph), (&path.col_path, &col_graph)] {
            let mut net = vec![0i64; graph.num_edges()];
            for ev in &path.events {
                match ev.kind {
                    FusionKind::Fuse => net[ev.edge] += 1,
                    FusionKind::Unfuse => net[ev.edge] -= 1,
                }
            }
            assert!(net.iter().all(|&n| n == 1));
        }
    }

    #[test]
    fn checkerboard_coexistence_has_few_distinct_values() {
        let (data, _, _) = gen_checkerboard(4, 2, 5, 5, 3.0, 0.05, 17).unwrap();
        assert_eq!((data.n(), data.p()), (20, 10));
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let config = PathConfig::default();
        let path =
            cbass_path(&data, &row_graph, &col_graph, &row_spec, &col_spec, &config).unwrap();

        let coexist: Vec<usize> = (0..path.row_path.gammas.len())
            .filter(|&s| {
                path.row_path.clusters_per_k[s] == 4 && path.col_path.clusters_per_k[s] == 2
            })
            .collect();
        assert!(!coexist.is_empty(), "no step realizes 4 row and 2 column clusters");
        let gamma_star = (path.row_path.gammas[*coexist.first().unwrap()]
            * path.row_path.gammas[*coexist.last().unwrap()])
        .sqrt();

        let mut carry = DlpaCarry::init(&data, &row_graph, &col_graph);
        let (u, _, _, converged) = dlpa_solve(
            &data, &row_graph, &col_graph, &row_spec, &col_spec, gamma_star, &mut carry, 1e-8,
            10_000,
        )
        .unwrap();
        assert!(converged);
        assert!(
            distinct_values(&u, 1e-6) <= 8,
            "expected at most 4 x 2 distinct values"
        );
    }

    #[test]
    fn viz_path_isolates_fusions_across_both_sides() {
        let (data, _, _) = gen_checkerboard(2, 2, 3, 3, 3.0, 0.1, 29).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let config = PathConfig::viz_default();
        let path =
            cbass_viz_path(&data, &row_graph, &col_graph, &row_spec, &col_spec, &config).unwrap();

        let mut fuse_steps = std::collections::BTreeSet::new();
        for ev in path
            .row_path
            .events
            .iter()
            .chain(path.col_path.events.iter())
            .filter(|e| e.kind == FusionKind::Fuse && !e.backtrack_exhausted)
        {
            assert!(
                fuse_steps.insert(ev.iterate),
                "two isolated fusions at step {}",
                ev.iterate
            );
        }
        for k in 1..=data.n() {
            assert!(path.row_path.clusters_per_k.contains(&k));
        }
        for k in 1..=data.p() {
            assert!(path.col_path.clusters_per_k.contains(&k));
        }
    }

    #[test]
    fn dlpa_grid_endpoints_are_analytic_limits() {
        let (data, _, _) = gen_checkerboard(2, 2, 4, 3, 2.0, 0.1, 5).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let epsilon =
            cbass_auto_epsilon(&data, &row_graph, &col_graph, &row_spec, &col_spec).unwrap();
        let grid = dlpa_grid_path(
            &data, &row_graph, &col_graph, &row_spec, &col_spec, epsilon, 2.0, 1e-7, 10_000,
        )
        .unwrap();

        let first = &grid.solutions[0];
        let near_x = (first - &data.values)
            .iter()
            .map(|d| d.abs())
            .fold(0.0_f64, f64::max);
        assert!(near_x <= 1e-5, "U at tiny lambda is {near_x:.3e} from X");

        let mean = data.values.iter().sum::<f64>() / (data.n() * data.p()) as f64;
        for v in grid.solutions.last().unwrap().iter() {
            assert_relative_eq!(*v, mean, epsilon = 1e-6);
        }
        assert_eq!(*grid.cluster_counts.last().unwrap(), 1);
        assert_eq!(
            *grid.col_cluster_counts.as_ref().unwrap().last().unwrap(),
            1
        );
    }

    #[test]
    fn dlpa_converged_solution_reenters_quickly() {
        let (data, _, _) = gen_checkerboard(2, 2, 3, 3, 2.0, 0.1, 31).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let lambda = 0.5;
        let mut carry = DlpaCarry::init(&data, &row_graph, &col_graph);
        let (_, first_iters, _, converged) = dlpa_solve(
            &data, &row_graph, &col_graph, &row_spec, &col_spec, lambda, &mut carry, 1e-8, 10_000,
        )
        .unwrap();
        assert!(converged);
        let (_, reentry_iters, _, converged) = dlpa_solve(
            &data, &row_graph, &col_graph, &row_spec, &col_spec, lambda, &mut carry, 1e-8, 10_000,
        )
        .unwrap();
        assert!(converged);
        assert!(reentry_iters <= 2, "re-entry took {reentry_iters} iterations");
        assert!(first_iters >= reentry_iters);
    }

    #[test]
    fn poisoned_state_is_rejected() {
        let (data, _, _) = gen_checkerboard(2, 2, 3, 3, 2.0, 0.1, 1).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let mut state = BiClusterState::init(&data, &row_graph, &col_graph);
        state.u[[0, 0]] = f64::NAN;
        let err = cbass_step(&state, 1.0, &row_graph, &col_graph, &row_spec, &col_spec)
            .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let (data, _, _) = gen_checkerboard(2, 2, 3, 3, 2.0, 0.1, 1).unwrap();
        let (row_graph, col_graph, row_spec, col_spec) = graphs_for(&data);
        let state = BiClusterState::init(&data, &row_graph, &col_graph);
        // Swapped graphs no longer match the state shapes.
        assert!(cbass_step(&state, 1.0, &col_graph, &row_graph, &col_spec, &row_spec).is_err());
        let wrong_spec = PenaltySpec::new(Norm::L2, vec![1.0]).unwrap();
        assert!(matches!(
            cbass_step(&state, 1.0, &row_graph, &col_graph, &wrong_spec, &col_spec),
            Err(Error::Length(_))
        ));
    }
}
