//! Dense phase-1 simplex for feasibility of `A x = b, x ≥ 0`.
//!
//! Every row gets an artificial variable and the sum of artificials is
//! minimized with Bland's rule. The system is feasible when that minimum is
//! numerically zero.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::Matrix;

/// Entries smaller than this are treated as zero when choosing pivots.
pub const PIVOT_TOL: f64 = 1e-9;
/// A phase-1 optimum above this residual means the system is infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("simplex did not terminate within {0} pivots")]
    NumericalFailure(usize),
    #[error("right-hand side has {rhs} entries for {rows} rows")]
    Shape { rows: usize, rhs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOne {
    /// Minimal sum of artificial variables.
    pub residual: f64,
    /// A basic solution for the structural variables.
    pub solution: Vec<f64>,
    pub pivots: usize,
}

impl PhaseOne {
    pub fn feasible(&self) -> bool {
        self.residual <= FEASIBILITY_TOL
    }
}

/// Runs phase 1 on `A x = b`. Rows with negative right-hand side are negated
/// first so the artificial basis starts feasible.
pub fn phase_one(a: &Matrix, b: &[f64]) -> Result<PhaseOne, LpError> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m {
        return Err(LpError::Shape {
            rows: m,
            rhs: b.len(),
        });
    }
    let width = n + m + 1;
    let rhs = n + m;
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = sign * a.get(i, j);
        }
        t[i * width + n + i] = 1.0;
        t[i * width + rhs] = sign * b[i];
    }
    // Objective row holds reduced costs of `Σ artificials`; its rhs is minus
    // the current objective value.
    let obj = m * width;
    for i in 0..m {
        for j in 0..n {
            t[obj + j] -= t[i * width + j];
        }
        t[obj + rhs] -= t[i * width + rhs];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let limit = 50 * (n + m) + 100;
    let mut pivots = 0;
    // Bland: lowest-index column with negative reduced cost.
    while let Some(enter) = (0..n + m).find(|&j| t[obj + j] < -PIVOT_TOL) {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let coef = t[i * width + enter];
            if coef > PIVOT_TOL {
                let ratio = t[i * width + rhs] / coef;
                let better = match leave {
                    None => true,
                    Some((r, best)) => {
                        ratio < best - PIVOT_TOL
                            || (ratio <= best + PIVOT_TOL && basis[i] < basis[r])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // Phase 1 is bounded below by zero, so a column without a positive
        // entry cannot improve the objective; only rounding produces one.
        let Some((row, _)) = leave else {
            break;
        };
        pivot(&mut t, width, m + 1, row, enter);
        basis[row] = enter;
        pivots += 1;
        if pivots > limit {
            return Err(LpError::NumericalFailure(pivots));
        }
    }

    let mut solution = vec![0.0; n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            solution[var] = t[i * width + rhs].max(0.0);
        }
    }
    Ok(PhaseOne {
        residual: (-t[obj + rhs]).max(0.0),
        solution,
        pivots,
    })
}

fn pivot(t: &mut [f64], width: usize, rows: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for j in 0..width {
        t[row * width + j] /= p;
    }
    t[row * width + col] = 1.0;
    for i in 0..rows {
        if i == row {
            continue;
        }
        let f = t[i * width + col];
        if f == 0.0 {
            continue;
        }
        for j in 0..width {
            t[i * width + j] -= f * t[row * width + j];
        }
        t[i * width + col] = 0.0;
    }
}

pub fn is_feasible(a: &Matrix, b: &[f64]) -> Result<bool, LpError> {
    phase_one(a, b).map(|r| r.feasible())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_feasible_system() {
        // x + y = 2, x - y = 0  → x = y = 1
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]);
        let r = phase_one(&a, &[2.0, 0.0]).unwrap();
        assert!(r.feasible());
        assert!((r.solution[0] - 1.0).abs() < 1e-12);
        assert!((r.solution[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_nonnegativity() {
        // x + y = -1 with x, y ≥ 0
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let r = phase_one(&a, &[-1.0]).unwrap();
        assert!(!r.feasible());
        assert!((r.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(!is_feasible(&a, &[1.0, 2.0]).unwrap());
        assert!(is_feasible(&a, &[1.0, 1.0]).unwrap());
    }

    #[test]
    fn degenerate_system_terminates() {
        let a = Matrix::from_rows(&[
            vec![1.0, 1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0, 1.0],
            vec![2.0, 2.0, 1.0, 1.0],
        ]);
        assert!(is_feasible(&a, &[0.0, 0.0, 0.0]).unwrap());
    }

    #[test]
    fn shape_checked() {
        let a = Matrix::from_rows(&[vec![1.0]]);
        assert_eq!(
            phase_one(&a, &[1.0, 2.0]),
            Err(LpError::Shape { rows: 1, rhs: 2 })
        );
    }
}
