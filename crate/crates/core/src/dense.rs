//! Small dense linear algebra used by the oracle and by the generic smoother.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Default upper bound on dense problem sizes.
pub const DEFAULT_ORACLE_CAP: usize = 4096;

/// Environment variable overriding [`DEFAULT_ORACLE_CAP`].
pub const ORACLE_CAP_ENV: &str = "MGMC_ORACLE_CAP";

const POWER_ITERATION_CAP: usize = 20_000;

pub fn oracle_cap() -> usize {
    std::env::var(ORACLE_CAP_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_ORACLE_CAP)
}

pub fn check_cap(n: usize) -> Result<()> {
    let cap = oracle_cap();
    if n > cap {
        Err(Error::OracleCapExceeded { n, cap })
    } else {
        Ok(())
    }
}

/// Largest singular value via power iteration on `AᵀA`.
///
/// Stops once the Rayleigh quotient changes by less than `tol` relative.
pub fn spectral_norm(a: &DenseMatrix, tol: f64) -> Result<f64> {
    check_len("spectral_norm (square)", a.nrows(), a.ncols())?;
    let n = a.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let ata = a.transpose() * a;
    // deterministic, non-degenerate start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        let w = &ata * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            return Ok(next.max(0.0).sqrt());
        }
        lambda = next;
    }
    Err(Error::NoConvergence {
        what: "spectral_norm power iteration",
        iterations: POWER_ITERATION_CAP,
    })
}

/// Largest singular value from a full SVD. Exact, but O(n³); used where a
/// power iteration would stall on clustered singular values.
pub fn spectral_norm_svd(a: &DenseMatrix) -> f64 {
    a.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

fn symmetric_eigen(a: &DenseMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_len("symmetric eigensolve (square)", a.nrows(), a.ncols())?;
    let asym = (a - a.transpose()).abs().max();
    let scale = a.abs().max().max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(SymmetricEigen::new((a + a.transpose()) * 0.5))
}

/// Symmetric square root of an SPD matrix.
pub fn dense_sqrt_spd(a: &DenseMatrix) -> Result<DenseMatrix> {
    spd_power(a, 0.5)
}

/// `A^p` for SPD `A` through its eigendecomposition.
pub fn spd_power(a: &DenseMatrix, p: f64) -> Result<DenseMatrix> {
    let eig = symmetric_eigen(a)?;
    if let Some((k, &v)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= 0.0)
    {
        return Err(Error::NotPositiveDefinite { pivot: k, value: v });
    }
    let d = DenseMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(p)));
    let q = &eig.eigenvectors;
    let s = q * d * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

pub fn min_eigenvalue(a: &DenseMatrix) -> Result<f64> {
    Ok(symmetric_eigen(a)?.eigenvalues.min())
}

pub fn eigenvalues_sorted(a: &DenseMatrix) -> Result<Vec<f64>> {
    let mut ev: Vec<f64> = symmetric_eigen(a)?.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(a: &DenseMatrix) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Dense lower Cholesky factor; errors if `a` is not numerically SPD.
pub fn dense_cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    check_len("dense_cholesky (square)", a.nrows(), a.ncols())?;
    match a.clone().cholesky() {
        Some(c) => Ok(c.l()),
        None => {
            let value = min_eigenvalue(a).unwrap_or(f64::NAN);
            Err(Error::NotPositiveDefinite { pivot: 0, value })
        }
    }
}

pub fn dense_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    check_len("dense_inverse (square)", a.nrows(), a.ncols())?;
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("singular matrix".into()))
}

pub fn spd_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    check_len("spd_inverse (square)", a.nrows(), a.ncols())?;
    let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((spectral_norm(&a, 1e-10).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_norm_of_rotation() {
        let a = DenseMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_norm(&a, 1e-10).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(8, &mut rng);
        let s = spectral_norm(&a, 1e-12).unwrap();
        let expect = spectral_norm_svd(&a);
        assert!((s - expect).abs() < 1e-8 * expect, "{s} vs {expect}");
    }

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = dense_sqrt_spd(&a).unwrap();
        assert!((s - DenseMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])))
            .abs()
            .max()
            < 1e-14);
        let i = DenseMatrix::identity(3, 3);
        assert!((dense_sqrt_spd(&i).unwrap() - &i).abs().max() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_matrix(6, &mut rng);
        let a = &g * g.transpose() + DenseMatrix::identity(6, 6) * 0.5;
        let s = dense_sqrt_spd(&a).unwrap();
        assert!((&s * &s - &a).norm() < 1e-10);
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            dense_sqrt_spd(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
