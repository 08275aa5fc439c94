//! Compressed sparse row matrices and the handful of kernels the samplers need.
//!
//! Rows are stored in ascending column order. Gibbs sweeps walk the rows in
//! index order, so the storage order is also the sweep order.

use std::io::Write;

use crate::dense::DenseMatrix;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Which triangle of a matrix a triangular operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

impl SparseMatrix {
    /// Assemble from `(row, col, value)` triplets.
    ///
    /// Duplicates are summed in insertion order and entries that sum to zero
    /// are dropped, so assembling `(i,j)` and `(j,i)` contributions in the same
    /// order produces a bitwise symmetric matrix.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= nrows {
                return Err(Error::DimensionMismatch {
                    op: "from_triplets (row)",
                    expected: nrows,
                    got: r,
                });
            }
            if c >= ncols {
                return Err(Error::DimensionMismatch {
                    op: "from_triplets (col)",
                    expected: ncols,
                    got: c,
                });
            }
        }
        // stable: duplicates keep insertion order
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut k = 0;
        while k < entries.len() {
            let (r, c, mut v) = entries[k];
            k += 1;
            while k < entries.len() && entries[k].0 == r && entries[k].1 == c {
                v += entries[k].2;
                k += 1;
            }
            if v != 0.0 {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Build directly from CSR arrays. Column indices within a row must be
    /// strictly increasing.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_len("from_csr indptr", nrows + 1, indptr.len())?;
        check_len("from_csr values", indices.len(), values.len())?;
        check_len("from_csr nnz", indices.len(), indptr[nrows])?;
        for r in 0..nrows {
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= ncols) {
                return Err(Error::InvalidParameter(format!(
                    "row {r} has unsorted or out-of-range column indices"
                )));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_matrix(&vec![1.0; n])
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        let (indices, values): (Vec<usize>, Vec<f64>) = diag
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .unzip();
        let mut indptr = vec![0; n + 1];
        for &i in &indices {
            indptr[i + 1] = 1;
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows: n,
            ncols: n,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let triplets = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m[(i, j)]));
        Self::from_triplets(m.nrows(), m.ncols(), triplets).expect("indices in range")
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// `y = A x` without dimension checks beyond debug assertions.
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `y = Aᵀ x`.
    pub fn transpose_mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        spmv(self, x)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let p = next[j];
                indices[p] = i;
                values[p] = v;
                next[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// Sparse product `self · other` (row-by-row Gustavson).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        check_len("matmul", self.ncols, other.nrows)?;
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut pattern = Vec::new();
        for i in 0..self.nrows {
            pattern.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&j, &b) in ocols.iter().zip(ovals) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                if acc[j] != 0.0 {
                    indices.push(j);
                    values.push(acc[j]);
                }
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Mirror the upper triangle (including the diagonal) into the lower one.
    /// Used to make computed products exactly symmetric.
    pub fn symmetrize_from_upper(&self) -> Result<SparseMatrix> {
        check_len("symmetrize_from_upper", self.nrows, self.ncols)?;
        let mut triplets = Vec::with_capacity(self.nnz());
        for (i, j, v) in self.triplets() {
            if j > i {
                triplets.push((i, j, v));
                triplets.push((j, i, v));
            } else if j == i {
                triplets.push((i, i, v));
            }
        }
        SparseMatrix::from_triplets(self.nrows, self.ncols, triplets)
    }

    pub fn max_asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.max_asymmetry() == 0.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// ‖self − other‖_F.
    pub fn frobenius_distance(&self, other: &SparseMatrix) -> Result<f64> {
        check_len("frobenius_distance rows", self.nrows, other.nrows)?;
        check_len("frobenius_distance cols", self.ncols, other.ncols)?;
        let diff = SparseMatrix::from_triplets(
            self.nrows,
            self.ncols,
            self.triplets()
                .chain(other.triplets().map(|(i, j, v)| (i, j, -v))),
        )?;
        Ok(diff.frobenius_norm())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Write in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Sparse matrix-vector product with dimension checking.
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    check_len("spmv", a.ncols(), x.len())?;
    let mut y = vec![0.0; a.nrows()];
    a.mul_vec_into(x, &mut y);
    Ok(y)
}

/// Solve `M x = b` where `M` is lower or upper triangular.
///
/// Only the requested triangle of `M` is read; entries on the other side are
/// rejected so that a wrongly oriented matrix is not silently truncated.
pub fn tri_solve(m: &SparseMatrix, triangle: Triangle, b: &[f64]) -> Result<Vec<f64>> {
    check_len("tri_solve (square)", m.nrows(), m.ncols())?;
    check_len("tri_solve", m.nrows(), b.len())?;
    let n = m.nrows();
    let mut x = b.to_vec();
    let solve_row = |i: usize, x: &mut [f64]| -> Result<()> {
        let (cols, vals) = m.row(i);
        let mut diag = 0.0;
        let mut s = x[i];
        for (&j, &v) in cols.iter().zip(vals) {
            let wrong_side = match triangle {
                Triangle::Lower => j > i,
                Triangle::Upper => j < i,
            };
            if wrong_side {
                return Err(Error::InvalidParameter(format!(
                    "entry ({i},{j}) outside the {triangle:?} triangle"
                )));
            }
            if j == i {
                diag = v;
            } else {
                s -= v * x[j];
            }
        }
        if diag == 0.0 {
            return Err(Error::SingularSplitting { row: i });
        }
        x[i] = s / diag;
        Ok(())
    };
    match triangle {
        Triangle::Lower => (0..n).try_for_each(|i| solve_row(i, &mut x))?,
        Triangle::Upper => (0..n).rev().try_for_each(|i| solve_row(i, &mut x))?,
    }
    Ok(x)
}

/// Split a square matrix into (diagonal, strictly lower, strictly upper) parts.
pub fn split_dlu(a: &SparseMatrix) -> (Vec<f64>, SparseMatrix, SparseMatrix) {
    let lower = a.triplets().filter(|&(i, j, _)| j < i);
    let upper = a.triplets().filter(|&(i, j, _)| j > i);
    (
        a.diagonal(),
        SparseMatrix::from_triplets(a.nrows(), a.ncols(), lower).expect("in range"),
        SparseMatrix::from_triplets(a.nrows(), a.ncols(), upper).expect("in range"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    t.push((i, j, rng.random::<f64>() * 2.0 - 1.0));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, t).unwrap()
    }

    #[test]
    fn identity_times_vector() {
        let y = spmv(&SparseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_matrix_times_vector() {
        let y = spmv(&SparseMatrix::zeros(4, 3), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn spmv_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_sparse(5, 0.5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let y = spmv(&a, &x).unwrap();
        let d = a.to_dense();
        for i in 0..5 {
            let expect: f64 = (0..5).map(|j| d[(i, j)] * x[j]).sum();
            assert!((y[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn spmv_dimension_mismatch() {
        assert!(matches!(
            spmv(&SparseMatrix::identity(3), &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0), (1, 0, -1.0), (0, 1, 5.0)],
        )
        .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn tri_solve_diagonal() {
        let m = SparseMatrix::diagonal_matrix(&[2.0, 4.0]);
        assert_eq!(
            tri_solve(&m, Triangle::Lower, &[2.0, 4.0]).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn tri_solve_bidiagonal_forward() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 1.0), (1, 1, 1.0)])
            .unwrap();
        assert_eq!(
            tri_solve(&m, Triangle::Lower, &[1.0, 2.0]).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn tri_solve_zero_diagonal_is_singular_splitting() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(
            tri_solve(&m, Triangle::Lower, &[1.0, 1.0]),
            Err(Error::SingularSplitting { row: 1 })
        ));
    }

    #[test]
    fn tri_solve_rejects_wrong_triangle() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)])
            .unwrap();
        assert!(tri_solve(&m, Triangle::Lower, &[1.0, 1.0]).is_err());
        assert!(tri_solve(&m, Triangle::Upper, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn tri_solve_random_unit_lower_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20;
        for triangle in [Triangle::Lower, Triangle::Upper] {
            let mut t = Vec::new();
            for i in 0..n {
                t.push((i, i, 1.0));
                for j in 0..n {
                    let off = match triangle {
                        Triangle::Lower => j < i,
                        Triangle::Upper => j > i,
                    };
                    if off && rng.random::<f64>() < 0.3 {
                        t.push((i, j, 0.3 * (rng.random::<f64>() - 0.5)));
                    }
                }
            }
            let m = SparseMatrix::from_triplets(n, n, t).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let x = tri_solve(&m, triangle, &b).unwrap();
            let r = spmv(&m, &x).unwrap();
            let res: f64 = r.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res / bn < 1e-12, "residual {res}");
        }
    }

    #[test]
    fn matmul_and_transpose_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sparse(6, 0.4, &mut rng);
        let b = random_sparse(6, 0.4, &mut rng);
        let c = a.matmul(&b).unwrap().to_dense();
        let expect = a.to_dense() * b.to_dense();
        assert!((c - expect).abs().max() < 1e-14);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn transpose_mul_matches_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_sparse(7, 0.3, &mut rng);
        let x: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let mut y1 = vec![0.0; 7];
        a.transpose_mul_vec_into(&x, &mut y1);
        let y2 = spmv(&a.transpose(), &x).unwrap();
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn matrix_market_dump() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(0, 2, 1.5), (1, 0, -2.0)]).unwrap();
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines[1], "2 3 2");
        assert!(lines[2].starts_with("1 3 1.5"));
        assert!(lines[3].starts_with("2 1 -2"));
    }
}
