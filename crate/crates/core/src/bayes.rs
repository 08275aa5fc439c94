//! Linear Gaussian observations of the field and the resulting posterior.
//!
//! The posterior precision `Ã_ℓ = A_ℓ + B_ℓ Γ⁻¹ B_ℓᵀ` is never formed for the
//! samplers; products go through `A_ℓ x + B_ℓ(Γ⁻¹(B_ℓᵀx))`.

use std::io::Read;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;

use crate::cholesky::{sparse_cholesky, Ordering, TriangularFactor};
use crate::dense::{dense_cholesky, spd_inverse, DenseMatrix};
use crate::discretise::Hierarchy;
use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::rng::RngStream;
use crate::sparse::SparseMatrix;
use crate::splitting::{check_omega, positive_diagonal, splitting_solve, Direction};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
    pub values: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl ObservationSet {
    pub fn new(
        centers: Vec<Vec<f64>>,
        radius: f64,
        values: Vec<f64>,
        noise_var: Vec<f64>,
    ) -> Result<Self> {
        check_len("observation values", centers.len(), values.len())?;
        check_len("observation variances", centers.len(), noise_var.len())?;
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "observation radius must be positive, got {radius}"
            )));
        }
        if let Some(j) = noise_var.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "noise variance of observation {j} must be positive"
            )));
        }
        Ok(Self {
            centers,
            radius,
            values,
            noise_var,
        })
    }

    pub fn empty() -> Self {
        Self {
            centers: Vec::new(),
            radius: 1.0,
            values: Vec::new(),
            noise_var: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn gamma(&self) -> NoiseCovariance {
        NoiseCovariance::Diagonal(self.noise_var.clone())
    }

    /// Read `x,y[,z],value,sigma2` rows (with a header line).
    pub fn from_csv<R: Read>(reader: R, dim: usize, radius: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut centers = Vec::new();
        let mut values = Vec::new();
        let mut vars = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidConfig(format!("observation csv: {e}")))?;
            if rec.len() != dim + 2 {
                return Err(Error::InvalidConfig(format!(
                    "observation row {} has {} columns, expected {}",
                    line + 1,
                    rec.len(),
                    dim + 2
                )));
            }
            let nums = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidConfig(format!("observation row {}: {e}", line + 1)))?;
            centers.push(nums[..dim].to_vec());
            values.push(nums[dim]);
            vars.push(nums[dim + 1]);
        }
        Self::new(centers, radius, values, vars)
    }

    pub fn from_csv_path(path: &Path, dim: usize, radius: f64) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?, dim, radius)
    }
}

/// Parameters of the synthetic observation generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObservations {
    pub count: usize,
    pub radius: f64,
    pub value_range: (f64, f64),
    pub noise_var_range: (f64, f64),
}

impl Default for SyntheticObservations {
    fn default() -> Self {
        Self {
            count: 8,
            radius: 0.025,
            value_range: (1.0, 4.0),
            noise_var_range: (1e-6, 2e-6),
        }
    }
}

impl SyntheticObservations {
    /// Centres on a jittered lattice inside `[0.2, 0.8]^d`, drawn from `rng`.
    ///
    /// The lattice has `k = ⌈count^{1/d}⌉` cells per side; when it has spare
    /// cells the one containing the domain centre is left out first, keeping
    /// observations away from the usual quantity of interest. Centres are
    /// snapped to the nearest interior vertex of `grid` so that small balls
    /// are never empty.
    pub fn generate(&self, grid: &Grid, rng: &mut RngStream) -> Result<ObservationSet> {
        let d = grid.dim();
        let mut k = 1usize;
        while k.pow(d as u32) < self.count {
            k += 1;
        }
        let width = 0.6 / k as f64;
        let mut cells: Vec<Vec<usize>> = (0..k.pow(d as u32))
            .map(|mut c| {
                (0..d)
                    .map(|_| {
                        let r = c % k;
                        c /= k;
                        r
                    })
                    .collect()
            })
            .collect();
        if cells.len() > self.count && k % 2 == 1 {
            let mid = k / 2;
            cells.retain(|c| c.iter().any(|&ci| ci != mid));
        }
        cells.shuffle(rng.inner());
        cells.truncate(self.count);

        let h = grid.h();
        let mut centers = Vec::with_capacity(self.count);
        let mut values = Vec::with_capacity(self.count);
        let mut vars = Vec::with_capacity(self.count);
        for cell in &cells {
            let x: Vec<f64> = cell
                .iter()
                .map(|&ci| {
                    let raw = 0.2 + (ci as f64 + 0.5) * width + rng.uniform(-0.25, 0.25) * width;
                    let snapped = (raw / h).round().clamp(1.0, grid.side() as f64);
                    snapped * h
                })
                .collect();
            centers.push(x);
            values.push(rng.uniform(self.value_range.0, self.value_range.1));
            vars.push(rng.uniform(self.noise_var_range.0, self.noise_var_range.1));
        }
        ObservationSet::new(centers, self.radius, values, vars)
    }
}

/// Observation noise covariance `Γ`.
#[derive(Debug, Clone)]
pub enum NoiseCovariance {
    Diagonal(Vec<f64>),
    /// General SPD covariance with its lower Cholesky factor.
    Dense { gamma: DenseMatrix, chol: DenseMatrix },
}

impl NoiseCovariance {
    pub fn dense(gamma: DenseMatrix) -> Result<Self> {
        let chol = dense_cholesky(&gamma)?;
        Ok(Self::Dense { gamma, chol })
    }

    pub fn len(&self) -> usize {
        match self {
            NoiseCovariance::Diagonal(v) => v.len(),
            NoiseCovariance::Dense { gamma, .. } => gamma.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            NoiseCovariance::Diagonal(v) => DenseMatrix::from_diagonal(&DVector::from_column_slice(v)),
            NoiseCovariance::Dense { gamma, .. } => gamma.clone(),
        }
    }

    pub fn inverse_dense(&self) -> Result<DenseMatrix> {
        match self {
            NoiseCovariance::Diagonal(v) => Ok(DenseMatrix::from_diagonal(&DVector::from_iterator(
                v.len(),
                v.iter().map(|s| 1.0 / s),
            ))),
            NoiseCovariance::Dense { gamma, .. } => spd_inverse(gamma),
        }
    }

    /// `x ← Γ⁻¹ x`.
    pub fn apply_inverse(&self, x: &mut [f64]) {
        match self {
            NoiseCovariance::Diagonal(v) => x.iter_mut().zip(v).for_each(|(xi, s)| *xi /= s),
            NoiseCovariance::Dense { chol, .. } => {
                let mut y = DVector::from_column_slice(x);
                chol.solve_lower_triangular_mut(&mut y);
                chol.tr_solve_lower_triangular_mut(&mut y);
                x.copy_from_slice(y.as_slice());
            }
        }
    }

    /// Map a standard normal vector to a draw from `N(0, Γ⁻¹)` in place.
    pub fn color_inverse(&self, z: &mut [f64]) {
        match self {
            NoiseCovariance::Diagonal(v) => z.iter_mut().zip(v).for_each(|(zi, s)| *zi /= s.sqrt()),
            NoiseCovariance::Dense { chol, .. } => {
                // Γ = LLᵀ, so L⁻ᵀz has covariance Γ⁻¹
                let mut y = DVector::from_column_slice(z);
                chol.tr_solve_lower_triangular_mut(&mut y);
                z.copy_from_slice(y.as_slice());
            }
        }
    }
}

/// Ball-averaging observation operator: column `j` averages the interior
/// vertices within `radius` of `centers[j]` with equal weights.
pub fn ball_average_rows(grid: &Grid, centers: &[Vec<f64>], radius: f64) -> Result<SparseMatrix> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    let mut t = Vec::new();
    for (j, c) in centers.iter().enumerate() {
        check_len("observation centre", grid.dim(), c.len())?;
        let inside = grid.vertices_in_ball(c, radius);
        if inside.is_empty() {
            return Err(Error::ResolutionTooCoarse {
                index: j,
                radius,
                h: grid.h(),
            });
        }
        let w = 1.0 / inside.len() as f64;
        t.extend(inside.into_iter().map(|i| (i, j, w)));
    }
    SparseMatrix::from_triplets(grid.len(), centers.len(), t)
}

/// `f = B Γ⁻¹ y`.
pub fn posterior_rhs(b: &SparseMatrix, gamma: &NoiseCovariance, y: &[f64]) -> Result<Vec<f64>> {
    check_len("posterior_rhs (y)", b.ncols(), y.len())?;
    check_len("posterior_rhs (Γ)", b.ncols(), gamma.len())?;
    let mut gy = y.to_vec();
    gamma.apply_inverse(&mut gy);
    let mut f = vec![0.0; b.nrows()];
    b.mul_vec_into(&gy, &mut f);
    Ok(f)
}

/// Target `N(Ã_L⁻¹ f_L, Ã_L⁻¹)` together with its level hierarchy.
#[derive(Debug, Clone)]
pub struct PosteriorProblem {
    hierarchy: Hierarchy,
    gamma: NoiseCovariance,
    y: Vec<f64>,
    f: Vec<f64>,
    /// `B_ℓᵀ` per level, for the low-rank products.
    bt: Vec<SparseMatrix>,
}

impl PosteriorProblem {
    /// Posterior for observations `y` with noise covariance `gamma`; the
    /// observation operator is the `b` stored in the hierarchy.
    pub fn new(hierarchy: Hierarchy, gamma: NoiseCovariance, y: Vec<f64>) -> Result<Self> {
        let beta = hierarchy.num_observations();
        check_len("posterior (y)", beta, y.len())?;
        check_len("posterior (Γ)", beta, gamma.len())?;
        let f = posterior_rhs(&hierarchy.fine().b, &gamma, &y)?;
        let bt = hierarchy.levels().iter().map(|l| l.b.transpose()).collect();
        Ok(Self {
            hierarchy,
            gamma,
            y,
            f,
            bt,
        })
    }

    /// Prior-only target `N(A⁻¹f, A⁻¹)`; the hierarchy must have β = 0.
    pub fn prior(hierarchy: Hierarchy, f: Vec<f64>) -> Result<Self> {
        check_len("prior (observations)", 0, hierarchy.num_observations())?;
        check_len("prior (f)", hierarchy.fine().len(), f.len())?;
        let bt = hierarchy.levels().iter().map(|l| l.b.transpose()).collect();
        Ok(Self {
            hierarchy,
            gamma: NoiseCovariance::Diagonal(Vec::new()),
            y: Vec::new(),
            f,
            bt,
        })
    }

    /// Replace the fine-level right-hand side.
    pub fn with_rhs(mut self, f: Vec<f64>) -> Result<Self> {
        check_len("with_rhs", self.dim(), f.len())?;
        self.f = f;
        Ok(self)
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn gamma(&self) -> &NoiseCovariance {
        &self.gamma
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn rhs(&self) -> &[f64] {
        &self.f
    }

    pub fn beta(&self) -> usize {
        self.hierarchy.num_observations()
    }

    pub fn dim(&self) -> usize {
        self.hierarchy.fine().len()
    }

    pub fn a(&self, level: usize) -> &SparseMatrix {
        &self.hierarchy.level(level).a
    }

    pub fn b(&self, level: usize) -> &SparseMatrix {
        &self.hierarchy.level(level).b
    }

    pub fn bt(&self, level: usize) -> &SparseMatrix {
        &self.bt[level]
    }

    /// `out = Ã_ℓ x`; `scratch` must have length β.
    pub fn apply_precision(&self, level: usize, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let lvl = self.hierarchy.level(level);
        lvl.a.mul_vec_into(x, out);
        if scratch.is_empty() {
            return;
        }
        self.bt[level].mul_vec_into(x, scratch);
        self.gamma.apply_inverse(scratch);
        let b = &lvl.b;
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = b.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                *o += v * scratch[j];
            }
        }
    }

    /// `Ã_ℓ` as an explicit sparse matrix (exactly symmetric).
    pub fn explicit_precision(&self, level: usize) -> Result<SparseMatrix> {
        let lvl = self.hierarchy.level(level);
        let n = lvl.len();
        if self.beta() == 0 {
            return Ok(lvl.a.clone());
        }
        let ginv = self.gamma.inverse_dense()?;
        let bt = &self.bt[level];
        let mut t: Vec<(usize, usize, f64)> = lvl.a.triplets().collect();
        for j in 0..self.beta() {
            for k in 0..self.beta() {
                let g = ginv[(j, k)];
                if g == 0.0 {
                    continue;
                }
                let (rj, vj) = bt.row(j);
                let (rk, vk) = bt.row(k);
                for (&r, &bj) in rj.iter().zip(vj) {
                    for (&s, &bk) in rk.iter().zip(vk) {
                        if s >= r {
                            t.push((r, s, g * (bj * bk)));
                        }
                    }
                }
            }
        }
        let upper: Vec<_> = t.into_iter().filter(|&(i, j, _)| j >= i).collect();
        SparseMatrix::from_triplets(n, n, upper)?.symmetrize_from_upper()
    }

    pub fn dense_precision(&self, level: usize) -> Result<DenseMatrix> {
        let lvl = self.hierarchy.level(level);
        let mut a = lvl.a.to_dense();
        if self.beta() > 0 {
            let b = lvl.b.to_dense();
            a += &b * self.gamma.inverse_dense()? * b.transpose();
        }
        Ok((&a + a.transpose()) * 0.5)
    }

    /// Sparse Cholesky factor of the explicit `Ã_ℓ`.
    pub fn factorize(&self, level: usize) -> Result<TriangularFactor> {
        sparse_cholesky(&self.explicit_precision(level)?, Ordering::FillReducing)
    }

    /// Posterior mean `Ã_L⁻¹ f_L`.
    pub fn mean(&self) -> Result<Vec<f64>> {
        self.factorize(self.hierarchy.finest())?.solve_normal(&self.f)
    }
}

/// Cached pieces of the low-rank corrected splitting on one level:
/// `B* = C (Γ + Bᵀ C)⁻¹` with `C = M⁻¹ B`.
#[derive(Debug, Clone)]
pub struct LowRankPrecompute {
    pub direction: Direction,
    pub omega: f64,
    /// `B*`, n × β.
    pub bstar: DenseMatrix,
    /// Diagonal of `A_ℓ`.
    pub diag: Vec<f64>,
}

impl LowRankPrecompute {
    /// `θ ← θ − B*(Bᵀθ)`; `scratch` must have length β.
    pub fn correct(&self, bt: &SparseMatrix, theta: &mut [f64], scratch: &mut [f64]) {
        if scratch.is_empty() {
            return;
        }
        bt.mul_vec_into(theta, scratch);
        let n = theta.len();
        for (k, &w) in scratch.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let col = &self.bstar.as_slice()[k * n..(k + 1) * n];
            theta.iter_mut().zip(col).for_each(|(t, c)| *t -= c * w);
        }
    }
}

pub fn precompute_lowrank(
    a: &SparseMatrix,
    b: &SparseMatrix,
    gamma: &NoiseCovariance,
    omega: f64,
    direction: Direction,
) -> Result<LowRankPrecompute> {
    check_omega(omega)?;
    check_len("precompute_lowrank (B rows)", a.nrows(), b.nrows())?;
    check_len("precompute_lowrank (Γ)", b.ncols(), gamma.len())?;
    let diag = positive_diagonal(a)?;
    let n = a.nrows();
    let beta = b.ncols();
    if beta == 0 {
        return Ok(LowRankPrecompute {
            direction,
            omega,
            bstar: DenseMatrix::zeros(n, 0),
            diag,
        });
    }
    let bd = b.to_dense();
    let mut c = bd.clone();
    for k in 0..beta {
        let col = &mut c.as_mut_slice()[k * n..(k + 1) * n];
        splitting_solve(a, &diag, omega, direction, col)?;
    }
    let s = gamma.to_dense() + bd.transpose() * &c;
    // B* = C S⁻¹  ⇔  B*ᵀ = S⁻ᵀ Cᵀ
    let lu = s.transpose().lu();
    let bstar_t = lu.solve(&c.transpose()).ok_or(Error::IllPosedObservations)?;
    if bstar_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllPosedObservations);
    }
    Ok(LowRankPrecompute {
        direction,
        omega,
        bstar: bstar_t.transpose(),
        diag,
    })
}
