//! Proximal operators of the weighted fusion penalties.
//!
//! For a stacked difference matrix `M` (one row per edge) the penalty is
//! `P(M; w, q) = sum_l w_l ||M_l.||_q` and its proximal operator acts
//! row by row. Fusions are detected downstream by rows that the prox maps
//! to *exactly* zero, so the `q = 2` branch sets rows to literal zeros
//! rather than relying on cancellation, and the other branches produce
//! exact zeros by construction.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::WeightGraph;

/// Which norm the fusion penalty applies to each difference row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L1 => write!(f, "l1"),
            Norm::L2 => write!(f, "l2"),
            Norm::LInf => write!(f, "linf"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::LInf),
            other => Err(Error::Parse(format!(
                "unknown norm {other:?}; expected l1, l2, or linf"
            ))),
        }
    }
}

/// Weighted fusion penalty specification: one positive weight per edge.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub norm: Norm,
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn new(norm: Norm, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Range(
                "penalty weights must be positive and finite".into(),
            ));
        }
        Ok(Self { norm, weights })
    }

    /// Takes the weights straight off a weight graph.
    pub fn from_graph(graph: &WeightGraph, norm: Norm) -> Self {
        Self {
            norm,
            weights: graph.edge_weights(),
        }
    }
}

/// Applies the proximal operator of `threshold_base * P(.; w, q)` to the
/// rows of `m`: row `l` is shrunk with effective threshold
/// `tau_l = w_l * threshold_base`.
pub fn prox_penalty(m: &Array2<f64>, threshold_base: f64, spec: &PenaltySpec) -> Result<Array2<f64>> {
    if !(threshold_base >= 0.0) {
        return Err(Error::Range(format!(
            "threshold must be non-negative, got {threshold_base}"
        )));
    }
    if m.nrows() != spec.weights.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} penalty weights",
            m.nrows(),
            spec.weights.len()
        )));
    }
    let mut out = m.to_owned();
    for (l, mut row) in out.rows_mut().into_iter().enumerate() {
        let tau = spec.weights[l] * threshold_base;
        match spec.norm {
            Norm::L1 => {
                row.mapv_inplace(|x| soft_threshold(x, tau));
            }
            Norm::L2 => {
                let norm = row.dot(&row).sqrt();
                if norm <= tau {
                    row.fill(0.0);
                } else {
                    let scale = 1.0 - tau / norm;
                    row.mapv_inplace(|x| scale * x);
                }
            }
            Norm::LInf => {
                // Moreau decomposition: prox of tau * ||.||_inf is the
                // residual of projection onto the l1 ball of radius tau.
                let proj = project_l1_ball(row.view(), tau);
                for (x, p) in row.iter_mut().zip(proj.iter()) {
                    *x -= p;
                }
            }
        }
    }
    Ok(out)
}

fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Euclidean projection onto the l1 ball of the given radius, via the
/// sort-and-threshold scheme (O(p log p)).
pub fn project_l1_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    assert!(radius >= 0.0, "l1 ball radius must be non-negative");
    if radius == 0.0 {
        return Array1::zeros(v.len());
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_owned();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.mapv(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Penalty value `P(M; w, q) = sum_l w_l ||M_l.||_q`.
pub fn penalty_value(m: &Array2<f64>, spec: &PenaltySpec) -> f64 {
    m.rows()
        .into_iter()
        .zip(&spec.weights)
        .map(|(row, w)| {
            let norm = match spec.norm {
                Norm::L1 => row.iter().map(|x| x.abs()).sum(),
                Norm::L2 => row.dot(&row).sqrt(),
                Norm::LInf => row.iter().map(|x| x.abs()).fold(0.0, f64::max),
            };
            w * norm
        })
        .sum()
}

/// True when every entry of the row is exactly zero.
pub fn row_is_zero(row: ArrayView1<f64>) -> bool {
    row.iter().all(|x| *x == 0.0)
}

/// Per-row exact-zero mask of a stacked difference matrix.
pub fn zero_mask(m: &Array2<f64>) -> Vec<bool> {
    m.rows().into_iter().map(|r| row_is_zero(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn spec(norm: Norm, weights: &[f64]) -> PenaltySpec {
        PenaltySpec::new(norm, weights.to_vec()).unwrap()
    }

    #[test]
    fn l2_shrinks_by_group_soft_threshold() {
        // tau = 2.5 on a row of norm 5 scales by (1 - 2.5/5) = 0.5.
        let m = arr2(&[[3.0, 4.0]]);
        let out = prox_penalty(&m, 2.5, &spec(Norm::L2, &[1.0])).unwrap();
        assert_eq!(out, arr2(&[[1.5, 2.0]]));
    }

    #[test]
    fn l2_zeroes_rows_at_or_below_threshold() {
        let m = arr2(&[[3.0, 4.0]]);
        let out = prox_penalty(&m, 5.0, &spec(Norm::L2, &[1.0])).unwrap();
        assert!(out.iter().all(|x| *x == 0.0));
        // Strictly above the row norm as well.
        let out = prox_penalty(&m, 6.0, &spec(Norm::L2, &[1.0])).unwrap();
        assert!(out.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn l2_exact_zero_iff_norm_at_most_tau() {
        let m = arr2(&[[3.0, 4.0]]);
        let out = prox_penalty(&m, 4.999, &spec(Norm::L2, &[1.0])).unwrap();
        assert!(!row_is_zero(out.row(0)));
    }

    #[test]
    fn l1_soft_thresholds_entrywise() {
        let m = arr2(&[[1.0, -3.0]]);
        let out = prox_penalty(&m, 2.0, &spec(Norm::L1, &[1.0])).unwrap();
        assert_eq!(out, arr2(&[[0.0, -1.0]]));
    }

    #[test]
    fn zero_threshold_is_identity() {
        let m = arr2(&[[1.5, -0.25, 3.0], [0.0, 2.0, -7.0]]);
        for norm in [Norm::L1, Norm::L2, Norm::LInf] {
            let out = prox_penalty(&m, 0.0, &spec(norm, &[1.0, 1.0])).unwrap();
            assert_eq!(out, m, "{norm} at zero threshold");
        }
    }

    #[test]
    fn weights_scale_the_threshold_per_row() {
        let m = arr2(&[[3.0, 4.0], [3.0, 4.0]]);
        let out = prox_penalty(&m, 5.0, &spec(Norm::L2, &[1.0, 0.5])).unwrap();
        assert!(row_is_zero(out.row(0)));
        assert_eq!(out.row(1), arr1(&[1.5, 2.0]));
    }

    #[test]
    fn linf_prox_reaches_exact_zero() {
        // ||x||_1 = 4 <= tau means the projection returns x itself and the
        // prox output is exactly zero.
        let m = arr2(&[[1.0, -3.0]]);
        let out = prox_penalty(&m, 4.0, &spec(Norm::LInf, &[1.0])).unwrap();
        assert!(row_is_zero(out.row(0)));
        let out = prox_penalty(&m, 3.9, &spec(Norm::LInf, &[1.0])).unwrap();
        assert!(!row_is_zero(out.row(0)));
    }

    #[test]
    fn project_inside_ball_is_identity() {
        let v = arr1(&[1.0, 1.0]);
        assert_eq!(project_l1_ball(v.view(), 3.0), v);
    }

    #[test]
    fn project_outside_ball_matches_hand_value() {
        let v = arr1(&[2.0, 0.0]);
        assert_eq!(project_l1_ball(v.view(), 1.0), arr1(&[1.0, 0.0]));
    }

    #[test]
    fn project_radius_zero_gives_origin() {
        let v = arr1(&[2.0, -1.0]);
        assert_eq!(project_l1_ball(v.view(), 0.0), arr1(&[0.0, 0.0]));
    }

    #[test]
    fn project_matches_grid_search_oracle() {
        // Fine 2-d grid over the l1 ball as an independent oracle.
        let v = arr1(&[1.3, -0.7]);
        let radius = 1.0;
        let proj = project_l1_ball(v.view(), radius);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = 2001;
        for i in 0..steps {
            let x = -radius + 2.0 * radius * i as f64 / (steps - 1) as f64;
            let rem = radius - x.abs();
            for j in 0..steps {
                let y = -rem + 2.0 * rem * j as f64 / (steps - 1) as f64;
                let d = (v[0] - x).powi(2) + (v[1] - y).powi(2);
                if d < best.0 {
                    best = (d, x, y);
                }
            }
        }
        assert!((proj[0] - best.1).abs() < 2e-3);
        assert!((proj[1] - best.2).abs() < 2e-3);
        // The closed-form projection can only be better than the grid point.
        let d_proj = (v[0] - proj[0]).powi(2) + (v[1] - proj[1]).powi(2);
        assert!(d_proj <= best.0 + 1e-12);
        assert!(proj.iter().map(|x| x.abs()).sum::<f64>() <= radius + 1e-12);
    }

    #[test]
    fn negative_threshold_is_rejected() {
        let m = arr2(&[[1.0]]);
        assert!(matches!(
            prox_penalty(&m, -0.1, &spec(Norm::L2, &[1.0])),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn weight_count_mismatch_is_rejected() {
        let m = arr2(&[[1.0], [2.0]]);
        assert!(matches!(
            prox_penalty(&m, 1.0, &spec(Norm::L2, &[1.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn nonpositive_weights_are_rejected() {
        assert!(PenaltySpec::new(Norm::L2, vec![1.0, 0.0]).is_err());
        assert!(PenaltySpec::new(Norm::L2, vec![-1.0]).is_err());
    }
}
