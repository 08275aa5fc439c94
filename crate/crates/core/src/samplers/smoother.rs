use nalgebra::DVector;

use crate::dense::{check_cap, DenseMatrix};
use crate::error::{check_len, Error, Result};
use crate::rng::NoiseSource;
use crate::sparse::SparseMatrix;

/// Random smoother for an arbitrary splitting `A = M − N`:
/// `θ' = θ + M⁻¹(f + ξ − Aθ)` with `ξ ~ N(0, M + Mᵀ − A)`.
///
/// The noise needs a dense factorisation, so this is limited to oracle-sized
/// problems. The factorisation is done once at construction.
#[derive(Debug, Clone)]
pub struct DenseSplittingSampler {
    a: DenseMatrix,
    m_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    noise_chol: DenseMatrix,
}

impl DenseSplittingSampler {
    pub fn new(a: &DenseMatrix, m: &DenseMatrix) -> Result<Self> {
        check_len("splitting (A square)", a.nrows(), a.ncols())?;
        check_len("splitting (M rows)", a.nrows(), m.nrows())?;
        check_len("splitting (M cols)", a.ncols(), m.ncols())?;
        check_cap(a.nrows())?;
        let m_lu = m.clone().lu();
        if !m_lu.is_invertible() {
            return Err(Error::SingularSplitting { row: 0 });
        }
        let cov = m + m.transpose() - a;
        let cov = (&cov + cov.transpose()) * 0.5;
        let noise_chol = cov.cholesky().ok_or(Error::InvalidSplitting)?.l();
        Ok(Self {
            a: a.clone(),
            m_lu,
            noise_chol,
        })
    }

    pub fn from_sparse(a: &SparseMatrix, m: &SparseMatrix) -> Result<Self> {
        check_cap(a.nrows())?;
        Self::new(&a.to_dense(), &m.to_dense())
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn step<N: NoiseSource + ?Sized>(
        &self,
        f: &[f64],
        theta: &mut [f64],
        noise: &mut N,
    ) -> Result<()> {
        check_len("random smoother (θ)", self.dim(), theta.len())?;
        check_len("random smoother (f)", self.dim(), f.len())?;
        let mut z = vec![0.0; self.dim()];
        noise.fill_standard_normal(&mut z);
        let xi = &self.noise_chol * DVector::from_vec(z);
        let th = DVector::from_column_slice(theta);
        let r = DVector::from_column_slice(f) + xi - &self.a * &th;
        let corr = self.m_lu.solve(&r).ok_or(Error::SingularSplitting { row: 0 })?;
        for (t, c) in theta.iter_mut().zip(corr.iter()) {
            *t += c;
        }
        Ok(())
    }
}

/// One step of the generic random smoother. Builds the dense noise factor on
/// every call; use [`DenseSplittingSampler`] to reuse it.
pub fn random_smoother_step<N: NoiseSource + ?Sized>(
    a: &SparseMatrix,
    m: &SparseMatrix,
    f: &[f64],
    theta: &[f64],
    noise: &mut N,
) -> Result<Vec<f64>> {
    let s = DenseSplittingSampler::from_sparse(a, m)?;
    let mut out = theta.to_vec();
    s.step(f, &mut out, noise)?;
    Ok(out)
}
