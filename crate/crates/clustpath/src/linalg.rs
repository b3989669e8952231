//! Dense symmetric positive definite helpers used by the solvers.
//!
//! The shifted Gram matrix `I + rho * D^T D` is small (one row per
//! observation) and is factorized once per weight graph, so a plain
//! dense Cholesky with cached forward/backward substitution is all the
//! linear algebra the solvers need.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Computes the lower Cholesky factor `L` with `L L^T = m`.
///
/// Fails with a numerical error when `m` is not positive definite or
/// contains non-finite entries.
pub fn cholesky_lower(m: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(Error::Shape(format!(
            "cholesky needs a square matrix, got {rows}x{cols}"
        )));
    }
    let n = rows;
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                // NaN fails this comparison too, so bad input surfaces here.
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite at pivot {i} (value {sum})"
                    )));
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves `L Y = B` for lower-triangular `L` and a matrix of right-hand
/// sides.
pub fn forward_substitute(lower: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = lower.nrows();
    let p = b.ncols();
    let mut y = b.to_owned();
    for i in 0..n {
        let (done, mut rest) = y.view_mut().split_at(Axis(0), i);
        let mut row = rest.row_mut(0);
        let l_row = lower.row(i);
        for k in 0..i {
            let c = l_row[k];
            if c != 0.0 {
                let yk = done.row(k);
                for j in 0..p {
                    row[j] -= c * yk[j];
                }
            }
        }
        let d = l_row[i];
        for j in 0..p {
            row[j] /= d;
        }
    }
    y
}

/// Solves `U X = Y` for upper-triangular `U` (stored row-major) and a
/// matrix of right-hand sides.
pub fn backward_substitute(upper: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let n = upper.nrows();
    let p = y.ncols();
    let mut x = y.to_owned();
    for i in (0..n).rev() {
        let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
        let mut row = head.row_mut(i);
        let u_row = upper.row(i);
        for k in (i + 1)..n {
            let c = u_row[k];
            if c != 0.0 {
                let xk = tail.row(k - i - 1);
                for j in 0..p {
                    row[j] -= c * xk[j];
                }
            }
        }
        let d = u_row[i];
        for j in 0..p {
            row[j] /= d;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn factor_of_identity_is_identity() {
        let l = cholesky_lower(&Array2::eye(4)).unwrap();
        assert_eq!(l, Array2::eye(4));
    }

    #[test]
    fn factor_reconstructs_input() {
        // I + D^T D for the 3-chain difference matrix.
        let m = arr2(&[[2.0, -1.0, 0.0], [-1.0, 3.0, -1.0], [0.0, -1.0, 2.0]]);
        let l = cholesky_lower(&m).unwrap();
        let back = l.dot(&l.t());
        for (a, b) in m.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_and_nan() {
        let indefinite = arr2(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            cholesky_lower(&indefinite),
            Err(Error::Numerical(_))
        ));
        let nan = arr2(&[[f64::NAN, 0.0], [0.0, 1.0]]);
        assert!(matches!(cholesky_lower(&nan), Err(Error::Numerical(_))));
    }

    #[test]
    fn substitution_solves_spd_system() {
        let m = arr2(&[
            [4.0, 1.0, 0.5],
            [1.0, 3.0, -0.5],
            [0.5, -0.5, 2.0],
        ]);
        let x_true = arr2(&[[1.0, -2.0], [0.5, 3.0], [-1.5, 0.25]]);
        let b = m.dot(&x_true);
        let l = cholesky_lower(&m).unwrap();
        let upper = l.t().to_owned();
        let x = backward_substitute(&upper, &forward_substitute(&l, &b));
        for (a, b) in x_true.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
