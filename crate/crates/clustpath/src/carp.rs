//! Algorithmic regularization paths for convex clustering.
//!
//! Instead of solving the clustering problem to convergence on a fixed grid
//! of penalty levels, the path algorithms here take exactly one ADMM triplet
//! per level and multiply the level by a step factor `t` between iterations.
//! As `t` shrinks toward one the iterate sequence approximates the exact
//! regularization path arbitrarily well, at a small fraction of the cost of
//! repeated full solves. [`carp_viz_path`] adds back-tracking so that at most
//! one new edge fuses per accepted step, which is what exact dendrogram
//! reconstruction needs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataio::{format_float, DataMatrix};
use crate::error::{Error, Result};
use crate::prox::PenaltySpec;
use crate::solver::{self, SolverState};
use crate::weights::WeightGraph;

/// Default multiplicative step between penalty levels.
pub const DEFAULT_T: f64 = 1.05;
/// Default fine step used by the back-tracking variant after the first fusion.
pub const DEFAULT_T_VIZ: f64 = 1.01;
/// Default coarse step used by the back-tracking variant before any fusion.
pub const DEFAULT_BURN_IN_T: f64 = 1.1;
/// Default number of step-size halvings allowed per back-tracking attempt.
pub const DEFAULT_MAX_BACKTRACK: usize = 10;
/// Default cap on the total number of path steps.
pub const DEFAULT_MAX_STEPS: usize = 10_000_000;

pub(crate) const POLISH_TOL: f64 = 1e-13;
pub(crate) const POLISH_MAX_ITER: usize = 10_000;

/// Tuning knobs for the path algorithms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathConfig {
    /// Initial penalty level; `None` picks the data-driven default of
    /// [`auto_epsilon`].
    pub epsilon: Option<f64>,
    /// Multiplicative step between consecutive penalty levels, `> 1`.
    pub t: f64,
    /// Coarse step used by the back-tracking variant until the first fusion.
    pub burn_in_t: f64,
    /// Step-size halvings allowed before a multi-fusion step is accepted.
    pub max_backtrack: usize,
    /// Keep every `thin`-th centroid snapshot; snapshots at fusion events and
    /// at the endpoint are always kept.
    pub thin: usize,
    /// Hard cap on the number of path steps.
    pub max_steps: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            t: DEFAULT_T,
            burn_in_t: DEFAULT_BURN_IN_T,
            max_backtrack: DEFAULT_MAX_BACKTRACK,
            thin: 1,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl PathConfig {
    /// Defaults for the back-tracking variant: a finer post-burn-in step.
    pub fn viz_default() -> Self {
        Self {
            t: DEFAULT_T_VIZ,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Range(format!(
                    "epsilon must be positive and finite, got {e}"
                )));
            }
        }
        if !(self.t > 1.0) || !self.t.is_finite() {
            return Err(Error::Range(format!("t must exceed 1, got {}", self.t)));
        }
        if !(self.burn_in_t > 1.0) || !self.burn_in_t.is_finite() {
            return Err(Error::Range(format!(
                "burn_in_t must exceed 1, got {}",
                self.burn_in_t
            )));
        }
        if self.max_backtrack == 0 {
            return Err(Error::Range("max_backtrack must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Range("thin must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Range("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Direction of a fusion event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// An edge's split row became exactly zero.
    Fuse,
    /// A previously zero split row became nonzero again.
    Unfuse,
}

/// One observed change in the zero pattern of the split variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionEvent {
    /// Index of the edge in the weight graph.
    pub edge: usize,
    /// Tail node of the edge.
    pub from: usize,
    /// Head node of the edge.
    pub to: usize,
    /// Penalty level the event is placed at.
    pub gamma: f64,
    /// Path step at which the event was observed.
    pub iterate: usize,
    pub kind: FusionKind,
    /// True when back-tracking ran out of halvings and this fusion was
    /// accepted together with at least one other.
    #[serde(default)]
    pub backtrack_exhausted: bool,
    /// Euclidean norm of the prox argument row at the event step. Used by
    /// [`postprocess_events`] to order simultaneous fusions; not serialized.
    #[serde(skip)]
    pub prox_margin: f64,
}

/// Centroid snapshot at one path step.
#[derive(Debug, Clone)]
pub struct PathIterate {
    /// Path step this snapshot belongs to.
    pub index: usize,
    /// Centroid matrix at the step.
    pub centroids: Array2<f64>,
    /// Zero mask of the split rows at the step.
    pub fused: Vec<bool>,
}

/// A computed regularization path: the penalty ladder, centroid snapshots,
/// fusion events, and the cluster-count sequence.
#[derive(Debug, Clone)]
pub struct CarpPath {
    /// Penalty level per path step. Entry 0 is the initial level `epsilon`,
    /// paired with the unpenalized solution `U = X`.
    pub gammas: Vec<f64>,
    /// Recorded centroid snapshots, possibly thinned.
    pub iterates: Vec<PathIterate>,
    /// Fusion and fission events in path order.
    pub events: Vec<FusionEvent>,
    /// Number of clusters after each path step.
    pub clusters_per_k: Vec<usize>,
}

impl CarpPath {
    /// Number of path steps, counting the initial iterate.
    pub fn steps(&self) -> usize {
        self.gammas.len()
    }

    /// Largest penalty level reached.
    pub fn gamma_max(&self) -> f64 {
        *self.gammas.last().expect("a path has at least one level")
    }

    /// Centroids at the end of the path.
    pub fn final_centroids(&self) -> &Array2<f64> {
        &self
            .iterates
            .last()
            .expect("a path has at least one iterate")
            .centroids
    }

    /// First recorded snapshot whose step realized exactly `k` clusters.
    /// Cluster counts change only at event steps, which are always recorded,
    /// so any realized count has a snapshot.
    pub fn iterate_at_clusters(&self, k: usize) -> Option<&PathIterate> {
        let step = self.clusters_per_k.iter().position(|&c| c == k)?;
        self.iterates.iter().find(|it| it.index == step)
    }

    /// Steps at which back-tracking ran out of halvings, deduplicated.
    pub fn backtrack_exhausted_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .events
            .iter()
            .filter(|e| e.backtrack_exhausted)
            .map(|e| e.iterate)
            .collect();
        steps.dedup();
        steps
    }

    /// JSON document with the ladder, events, cluster counts, and snapshots.
    pub fn to_json_string(&self) -> Result<String> {
        let iterates: Vec<_> = self
            .iterates
            .iter()
            .map(|it| {
                json!({
                    "index": it.index,
                    "centroids": it
                        .centroids
                        .rows()
                        .into_iter()
                        .map(|r| r.to_vec())
                        .collect::<Vec<_>>(),
                    "fused": it.fused,
                })
            })
            .collect();
        let doc = json!({
            "gammas": self.gammas,
            "events": self.events,
            "clusters_per_k": self.clusters_per_k,
            "iterates": iterates,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Writes the events as `edge,from,to,gamma,iterate,kind,backtrack_exhausted`.
    pub fn write_events_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            "edge",
            "from",
            "to",
            "gamma",
            "iterate",
            "kind",
            "backtrack_exhausted",
        ])?;
        for e in &self.events {
            let kind = match e.kind {
                FusionKind::Fuse => "fuse",
                FusionKind::Unfuse => "unfuse",
            };
            writer.write_record([
                e.edge.to_string(),
                e.from.to_string(),
                e.to.to_string(),
                format_float(e.gamma),
                e.iterate.to_string(),
                kind.to_string(),
                e.backtrack_exhausted.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Data-driven initial penalty level, small enough that the first steps stay
/// far from any fusion regardless of data scale:
/// `1e-6 * max_l ||(D X)_l|| / min_l w_l`.
pub fn auto_epsilon(data: &DataMatrix, graph: &WeightGraph, spec: &PenaltySpec) -> Result<f64> {
    solver::validate_problem(graph, spec, data)?;
    let dx = graph.apply_difference(&data.values);
    let max_row = dx
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0_f64, f64::max);
    if max_row <= 0.0 {
        return Err(Error::Degenerate(
            "no penalty scale: the graph has no edges or every connected pair coincides".into(),
        ));
    }
    let min_w = spec.weights.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(1e-6 * max_row / min_w)
}

/// One path step: a single ADMM triplet at penalty level `gamma`.
pub fn carp_step(
    data: &DataMatrix,
    state: &SolverState,
    gamma: f64,
    graph: &WeightGraph,
    spec: &PenaltySpec,
) -> Result<SolverState> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Range(format!(
            "gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    solver::validate_problem(graph, spec, data)?;
    state.validate(data, graph)?;
    let mut next = state.clone();
    solver::admm_iterate(&mut next, &data.values, graph, spec, gamma / graph.rho())?;
    Ok(next)
}

/// One-step-per-level regularization path with a fixed multiplicative step.
///
/// Starts from the unpenalized solution `U = X` at level `epsilon`, then
/// takes one ADMM triplet per level until every split row is exactly zero.
/// The terminal iterate is polished at the final level so the recorded
/// endpoint is the fully fused solution (grand-mean rows).
pub fn carp_path(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    config: &PathConfig,
) -> Result<CarpPath> {
    run_path(data, graph, spec, config, false)
}

/// Back-tracking path that isolates fusion events.
///
/// Uses the coarse `burn_in_t` step until the first fusion, then the fine
/// `t`. Whenever a step would fuse more than one new edge, the step is
/// discarded, the increment is halved (`t' = 1 + (t - 1)/2`), and the step is
/// retried from the saved state, up to `max_backtrack` times. After a step
/// that fuses an edge is accepted, the increment resets to `t`; steps that
/// fuse nothing keep the halved increment so the pending fusion is approached
/// slowly. Exhausting the budget is not fatal: the step is accepted and its
/// fusion events carry `backtrack_exhausted = true`.
pub fn carp_viz_path(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    config: &PathConfig,
) -> Result<CarpPath> {
    run_path(data, graph, spec, config, true)
}

fn run_path(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    config: &PathConfig,
    viz: bool,
) -> Result<CarpPath> {
    config.validate()?;
    solver::validate_problem(graph, spec, data)?;
    let epsilon = match config.epsilon {
        Some(e) => e,
        None => auto_epsilon(data, graph, spec)?,
    };

    let mut state = SolverState::init(data, graph);
    let mut fused = state.fused_mask();
    let mut gammas = vec![epsilon];
    let mut clusters_per_k = vec![graph.component_count(&fused)];
    let mut iterates = vec![PathIterate {
        index: 0,
        centroids: state.centroids.clone(),
        fused: fused.clone(),
    }];
    let mut events: Vec<FusionEvent> = Vec::new();

    let mut t_eff = if viz { config.burn_in_t } else { config.t };
    let mut step = 0usize;

    loop {
        if fused.iter().all(|&f| f) {
            if step == 0 {
                // Nothing ever moved; the path is the single unpenalized iterate.
                break;
            }
            let gamma_last = *gammas.last().expect("ladder is nonempty");
            let (margins, intact) = polish_fused(data, graph, spec, &mut state, gamma_last)?;
            let mask = state.fused_mask();
            let last = iterates.last_mut().expect("at least the initial iterate");
            debug_assert_eq!(last.index, step);
            last.centroids = state.centroids.clone();
            last.fused = mask.clone();
            if intact {
                break;
            }
            // Polishing unfused an edge: the fusion was premature. Record the
            // fissions at the same level and resume stepping.
            for (l, e) in graph.edges().iter().enumerate() {
                if fused[l] && !mask[l] {
                    events.push(FusionEvent {
                        edge: l,
                        from: e.from,
                        to: e.to,
                        gamma: gamma_last,
                        iterate: step,
                        kind: FusionKind::Unfuse,
                        backtrack_exhausted: false,
                        prox_margin: margins[l],
                    });
                }
            }
            fused = mask;
            *clusters_per_k.last_mut().expect("nonempty") = graph.component_count(&fused);
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
        let (gamma, margins, new_fused, exhausted) = loop {
            let gamma = base_gamma * t_eff;
            if !gamma.is_finite() {
                return Err(Error::Numerical(
                    "penalty level overflowed the floating-point range".into(),
                ));
            }
            let mut trial = state.clone();
            let margins =
                solver::admm_iterate(&mut trial, &data.values, graph, spec, gamma / graph.rho())?;
            let trial_fused = trial.fused_mask();
            let new_fusions = trial_fused
                .iter()
                .zip(&fused)
                .filter(|(now, was)| **now && !**was)
                .count();
            if !viz || new_fusions <= 1 {
                state = trial;
                break (gamma, margins, trial_fused, false);
            }
            if budget == 0 {
                state = trial;
                break (gamma, margins, trial_fused, true);
            }
            budget -= 1;
            t_eff = 1.0 + (t_eff - 1.0) / 2.0;
        };

        step += 1;
        let mut any_fusion = false;
        for (l, e) in graph.edges().iter().enumerate() {
            if new_fused[l] == fused[l] {
                continue;
            }
            let kind = if new_fused[l] {
                FusionKind::Fuse
            } else {
                FusionKind::Unfuse
            };
            any_fusion |= new_fused[l];
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
        let changed = new_fused != fused;
        fused = new_fused;
        gammas.push(gamma);
        clusters_per_k.push(graph.component_count(&fused));
        if viz && any_fusion {
            t_eff = config.t;
        }
        if changed || step % config.thin == 0 {
            iterates.push(PathIterate {
                index: step,
                centroids: state.centroids.clone(),
                fused: fused.clone(),
            });
        }
    }

    if iterates.last().map(|it| it.index) != Some(step) {
        iterates.push(PathIterate {
            index: step,
            centroids: state.centroids.clone(),
            fused: fused.clone(),
        });
    }

    Ok(CarpPath {
        gammas,
        iterates,
        events,
        clusters_per_k,
    })
}

/// Iterates at the fixed terminal level until the centroids settle, turning
/// the first fully fused iterate into the exact fully fused solution.
/// Returns the last prox margins and whether the fused mask survived.
fn polish_fused(
    data: &DataMatrix,
    graph: &WeightGraph,
    spec: &PenaltySpec,
    state: &mut SolverState,
    gamma: f64,
) -> Result<(Vec<f64>, bool)> {
    let mut margins = vec![0.0; graph.num_edges()];
    for _ in 0..POLISH_MAX_ITER {
        let prev = state.centroids.clone();
        margins = solver::admm_iterate(state, &data.values, graph, spec, gamma / graph.rho())?;
        if !state.fused_mask().iter().all(|&f| f) {
            return Ok((margins, false));
        }
        if solver::rel_change(&state.centroids, &prev) <= POLISH_TOL {
            return Ok((margins, true));
        }
    }
    log::warn!("terminal polish hit its iteration cap before reaching {POLISH_TOL}");
    Ok((margins, true))
}

/// Spreads simultaneous fusions over distinct penalty levels.
///
/// For any step at which `m > 1` edges fused at the same level, the edges are
/// ordered by ascending prox-argument row norm (a row further below its
/// threshold would have fused at a smaller level) with ties broken by edge
/// index, and assigned levels spaced evenly in log-gamma over
/// `(gamma_prev, gamma_step]`; the last edge keeps `gamma_step` exactly.
/// Fission events are left untouched. The result is a fixed point of this
/// function.
pub fn postprocess_events(mut path: CarpPath) -> CarpPath {
    let mut groups: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
    for (i, ev) in path.events.iter().enumerate() {
        if ev.kind == FusionKind::Fuse {
            groups
                .entry((ev.iterate, ev.gamma.to_bits()))
                .or_default()
                .push(i);
        }
    }
    for ((iterate, bits), mut members) in groups {
        if members.len() < 2 {
            continue;
        }
        let hi = f64::from_bits(bits);
        let prev = if iterate >= 1 && iterate < path.gammas.len() {
            path.gammas[iterate - 1]
        } else {
            hi * 0.5
        };
        let lo = if prev > 0.0 && prev < hi { prev } else { hi * 0.5 };
        members.sort_by(|&a, &b| {
            let (ea, eb) = (&path.events[a], &path.events[b]);
            ea.prox_margin
                .partial_cmp(&eb.prox_margin)
                .unwrap_or(Ordering::Equal)
                .then(ea.edge.cmp(&eb.edge))
        });
        let m = members.len();
        let ratio = hi / lo;
        for (j, &i) in members.iter().enumerate() {
            path.events[i].gamma = if j + 1 == m {
                hi
            } else {
                lo * ratio.powf((j + 1) as f64 / m as f64)
            };
        }
    }
    path.events.sort_by(|a, b| {
        a.iterate
            .cmp(&b.iterate)
            .then(a.gamma.partial_cmp(&b.gamma).unwrap_or(Ordering::Equal))
            .then(a.edge.cmp(&b.edge))
    });
    path
}
