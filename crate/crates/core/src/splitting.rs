//! SOR-type splittings `M = ω⁻¹D + L` (forward) and `M = ω⁻¹D + Lᵀ`
//! (backward), applied row by row straight from the rows of `A`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

pub(crate) fn check_omega(omega: f64) -> Result<()> {
    if omega > 0.0 && omega < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "relaxation factor must lie in (0, 2), got {omega}"
        )))
    }
}

pub(crate) fn positive_diagonal(a: &SparseMatrix) -> Result<Vec<f64>> {
    let d = a.diagonal();
    if let Some(row) = d.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::SingularSplitting { row });
    }
    Ok(d)
}

/// `θ ← θ + M⁻¹(r − Aθ)` as an in-place sweep:
/// `θ_i ← (1−ω)θ_i + ω/a_ii (r_i − Σ_{j≠i} a_ij θ_j)`, visiting rows in
/// ascending (forward) or descending (backward) order.
pub fn sor_sweep(
    a: &SparseMatrix,
    diag: &[f64],
    omega: f64,
    direction: Direction,
    rhs: &[f64],
    theta: &mut [f64],
) {
    let n = a.nrows();
    debug_assert_eq!(theta.len(), n);
    debug_assert_eq!(rhs.len(), n);
    let mut update = |i: usize| {
        let (cols, vals) = a.row(i);
        let mut s = rhs[i];
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i {
                s -= v * theta[j];
            }
        }
        theta[i] = if omega == 1.0 {
            s / diag[i]
        } else {
            (1.0 - omega) * theta[i] + omega * s / diag[i]
        };
    };
    match direction {
        Direction::Forward => (0..n).for_each(&mut update),
        Direction::Backward => (0..n).rev().for_each(&mut update),
    }
}

/// Solve `M x = b` in place.
pub fn splitting_solve(
    a: &SparseMatrix,
    diag: &[f64],
    omega: f64,
    direction: Direction,
    x: &mut [f64],
) -> Result<()> {
    check_len("splitting_solve", a.nrows(), x.len())?;
    let n = a.nrows();
    let mut solve = |i: usize| {
        let (cols, vals) = a.row(i);
        let mut s = x[i];
        for (&j, &v) in cols.iter().zip(vals) {
            let in_triangle = match direction {
                Direction::Forward => j < i,
                Direction::Backward => j > i,
            };
            if in_triangle {
                s -= v * x[j];
            }
        }
        x[i] = s * omega / diag[i];
    };
    match direction {
        Direction::Forward => (0..n).for_each(&mut solve),
        Direction::Backward => (0..n).rev().for_each(&mut solve),
    }
    Ok(())
}

/// `M` as an explicit sparse matrix.
pub fn splitting_matrix(a: &SparseMatrix, omega: f64, direction: Direction) -> SparseMatrix {
    let t = a.triplets().filter_map(|(i, j, v)| {
        if i == j {
            Some((i, j, v / omega))
        } else if (direction == Direction::Forward) == (j < i) {
            Some((i, j, v))
        } else {
            None
        }
    });
    SparseMatrix::from_triplets(a.nrows(), a.ncols(), t).expect("indices in range")
}
