//! Dense iteration matrices of the multigrid sampler and the quantities
//! derived from them, for verifying the stochastic implementation on small
//! problems.
//!
//! Everything here is built from explicit dense matrices and shares no code
//! with the sweep-based samplers beyond matrix assembly.

use nalgebra::DVector;

use crate::bayes::PosteriorProblem;
use crate::dense::{
    check_cap, dense_inverse, min_eigenvalue, spd_inverse, spd_power, spectral_norm_svd,
    spectral_radius, DenseMatrix,
};
use crate::error::{check_len, Error, Result};
use crate::samplers::{CoarseMode, CycleParams, Smoothing};

/// Dense operators for one level.
#[derive(Debug, Clone)]
pub struct LevelOperators {
    /// Precision matrix (`Ã_ℓ` for posteriors).
    pub a: DenseMatrix,
    pub a_inv: DenseMatrix,
    /// Low-rank corrected splitting matrix of the forward smoother.
    pub m_forward: DenseMatrix,
    /// `I − M_fwd⁻¹ A`.
    pub s_pre: DenseMatrix,
    /// `I − M_bwd⁻¹ A`.
    pub s_post: DenseMatrix,
    /// Two-grid correction `I − P A_{ℓ-1}⁻¹ Pᵀ A_ℓ` (levels ≥ 1).
    pub t: Option<DenseMatrix>,
    /// `T_ℓ + P X_{ℓ-1}^γ A_{ℓ-1}⁻¹ Pᵀ A_ℓ` (levels ≥ 1).
    pub q: Option<DenseMatrix>,
    /// Iteration matrix `X_ℓ`.
    pub x: DenseMatrix,
    /// `(I − X_ℓ) A_ℓ⁻¹`.
    pub y: DenseMatrix,
    /// `A_ℓ⁻¹ − X_ℓ A_ℓ⁻¹ X_ℓᵀ`.
    pub k: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct IterationBundle {
    pub levels: Vec<LevelOperators>,
    /// Coarse smoother matrix `S₀` (zero for an exact coarse solve).
    pub s0_coarse: DenseMatrix,
}

impl IterationBundle {
    pub fn finest(&self) -> &LevelOperators {
        self.levels.last().expect("at least one level")
    }
}

/// Dense low-rank corrected forward splitting `ω⁻¹D + L + BΓ⁻¹Bᵀ` on `level`.
pub fn dense_forward_splitting(problem: &PosteriorProblem, level: usize, omega: f64) -> Result<DenseMatrix> {
    let a = problem.a(level).to_dense();
    let n = a.nrows();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = if i == j { a[(i, i)] / omega } else { a[(i, j)] };
        }
    }
    if problem.beta() > 0 {
        let b = problem.b(level).to_dense();
        m += &b * problem.gamma().inverse_dense()? * b.transpose();
    }
    Ok(m)
}

/// `M (M + Mᵀ − A)⁻¹ Mᵀ`, the splitting of a forward sweep followed by its
/// adjoint.
pub fn symmetrized_splitting(m: &DenseMatrix, a: &DenseMatrix) -> Result<DenseMatrix> {
    let mid = m + m.transpose() - a;
    let inv = dense_inverse(&mid)?;
    let s = m * inv * m.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn mat_pow(x: &DenseMatrix, p: usize) -> DenseMatrix {
    let mut out = DenseMatrix::identity(x.nrows(), x.ncols());
    for _ in 0..p {
        out = &out * x;
    }
    out
}

pub fn build_iteration_bundle(problem: &PosteriorProblem, params: &CycleParams) -> Result<IterationBundle> {
    params.validate()?;
    check_cap(problem.dim())?;
    let h = problem.hierarchy();
    let finest = h.finest();
    let mut levels: Vec<LevelOperators> = Vec::with_capacity(finest + 1);
    let mut s0_coarse = DenseMatrix::zeros(0, 0);
    for l in 0..=finest {
        let a = problem.dense_precision(l)?;
        let n = a.nrows();
        let a_inv = spd_inverse(&a)?;
        let id = DenseMatrix::identity(n, n);
        let m_forward = dense_forward_splitting(problem, l, params.omega)?;
        let m_backward = m_forward.transpose();
        let s_fwd = &id - dense_inverse(&m_forward)? * &a;
        let s_bwd = &id - dense_inverse(&m_backward)? * &a;
        let s_sym = &s_bwd * &s_fwd;
        let (s_pre, s_post) = match params.smoothing {
            Smoothing::ForwardBackward => (s_fwd, s_bwd),
            Smoothing::Symmetric => (s_sym.clone(), s_sym.clone()),
        };

        let (t, q, x) = if l == 0 {
            let s0 = match params.coarse {
                CoarseMode::Cholesky => DenseMatrix::zeros(n, n),
                CoarseMode::Smoother => s_sym,
            };
            let x = match params.coarse {
                CoarseMode::Cholesky => DenseMatrix::zeros(n, n),
                CoarseMode::Smoother => mat_pow(&s0, params.nu0),
            };
            s0_coarse = s0;
            (None, None, x)
        } else {
            let p = h.level(l).prolongation.as_ref().expect("P").to_dense();
            let coarse = &levels[l - 1];
            let coarse_solve = &coarse.a_inv * p.transpose() * &a;
            let t = &id - &p * &coarse_solve;
            let gamma = params.gamma(l, finest);
            let q = &t + &p * mat_pow(&coarse.x, gamma) * &coarse_solve;
            let x = mat_pow(&s_post, params.nu2) * &q * mat_pow(&s_pre, params.nu1);
            (Some(t), Some(q), x)
        };
        let y = (&id - &x) * &a_inv;
        let k = &a_inv - &x * &a_inv * x.transpose();
        levels.push(LevelOperators {
            a,
            a_inv,
            m_forward,
            s_pre,
            s_post,
            t,
            q,
            x,
            y,
            k,
        });
    }
    Ok(IterationBundle { levels, s0_coarse })
}

/// `‖A^{1/2} X A^{-1/2}‖₂`.
pub fn energy_norm_of(x: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    check_len("energy_norm_of", a.nrows(), x.nrows())?;
    let half = spd_power(a, 0.5)?;
    let minus_half = spd_power(a, -0.5)?;
    Ok(spectral_norm_svd(&(half * x * minus_half)))
}

/// `λ_min(M − A)` for a symmetric splitting matrix `M`.
pub fn check_smoothing_property(m: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    check_len("check_smoothing_property", a.nrows(), m.nrows())?;
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 * m.abs().max() {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let d = m - a;
    min_eigenvalue(&((&d + d.transpose()) * 0.5))
}

/// `‖M^{1/2}(A_ℓ⁻¹ − P A_{ℓ-1}⁻¹ Pᵀ)M^{1/2}‖₂` for ℓ = 1..=L, with `M` the
/// symmetrised low-rank Gibbs splitting of level ℓ.
pub fn check_approximation_property(problem: &PosteriorProblem, omega: f64) -> Result<Vec<f64>> {
    check_cap(problem.dim())?;
    let h = problem.hierarchy();
    let mut out = Vec::with_capacity(h.finest());
    for l in 1..=h.finest() {
        let a = problem.dense_precision(l)?;
        let ac = problem.dense_precision(l - 1)?;
        let p = h.level(l).prolongation.as_ref().expect("P").to_dense();
        let m = symmetrized_splitting(&dense_forward_splitting(problem, l, omega)?, &a)?;
        let mh = spd_power(&m, 0.5)?;
        let diff = spd_inverse(&a)? - &p * spd_inverse(&ac)? * p.transpose();
        out.push(spectral_norm_svd(&(&mh * diff * &mh)));
    }
    Ok(out)
}

/// Same quantity for an explicit fine/coarse pair.
pub fn approximation_constant(
    m: &DenseMatrix,
    a_fine: &DenseMatrix,
    a_coarse: &DenseMatrix,
    p: &DenseMatrix,
) -> Result<f64> {
    let mh = spd_power(m, 0.5)?;
    let diff = spd_inverse(a_fine)? - p * spd_inverse(a_coarse)? * p.transpose();
    Ok(spectral_norm_svd(&(&mh * diff * &mh)))
}

/// Exact integrated autocorrelation time of `Fᵀθ` for the chain with
/// iteration matrix `X` at stationarity.
pub fn exact_iact(x: &DenseMatrix, a: &DenseMatrix, f: &[f64]) -> Result<f64> {
    check_len("exact_iact", a.nrows(), f.len())?;
    let radius = spectral_radius(x);
    if radius >= 1.0 {
        return Err(Error::Divergent { radius });
    }
    let n = a.nrows();
    let fv = DVector::from_column_slice(f);
    let ainv_f = spd_inverse(a)? * &fv;
    let var = fv.dot(&ainv_f);
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let id = DenseMatrix::identity(n, n);
    let lu = (&id - x).lu();
    let series = match lu.solve(&ainv_f) {
        Some(s) if s.iter().all(|v| v.is_finite()) => fv.dot(&s),
        _ => {
            // truncated Neumann series
            let mut term = ainv_f.clone();
            let mut total = fv.dot(&term);
            for _ in 0..1_000_000 {
                term = x * term;
                let c = fv.dot(&term);
                total += c;
                if c.abs() < 1e-12 * var {
                    break;
                }
            }
            total
        }
    };
    Ok(-1.0 + 2.0 * series / var)
}

/// Upper bound `(1 + q)/(1 − q)` on the IACT for `q = ‖X‖_A < 1`.
pub fn iact_bound(energy_norm: f64) -> Result<f64> {
    if energy_norm >= 1.0 {
        return Err(Error::Divergent {
            radius: energy_norm,
        });
    }
    Ok((1.0 + energy_norm) / (1.0 - energy_norm))
}

/// One step of the exact moment recursion:
/// `E' = X E + Y f`, `C' = X C Xᵀ + K`.
pub fn moment_step(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: &DenseMatrix,
    f: &[f64],
    mean: &DVector<f64>,
    cov: &DenseMatrix,
) -> (DVector<f64>, DenseMatrix) {
    let fv = DVector::from_column_slice(f);
    (x * mean + y * fv, x * cov * x.transpose() + k)
}

/// Moments after `m` steps from `(mean0, cov0)`.
pub fn moment_recursions(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: &DenseMatrix,
    f: &[f64],
    mean0: &DVector<f64>,
    cov0: &DenseMatrix,
    m: usize,
) -> (DVector<f64>, DenseMatrix) {
    let mut mean = mean0.clone();
    let mut cov = cov0.clone();
    for _ in 0..m {
        (mean, cov) = moment_step(x, y, k, f, &mean, &cov);
    }
    (mean, cov)
}

/// `Cov(θ^{(m+s)}, θ^{(m)}) = X^s Cov(θ^{(m)})`.
pub fn cross_covariance(x: &DenseMatrix, cov: &DenseMatrix, s: usize) -> DenseMatrix {
    mat_pow(x, s) * cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{ball_average_rows, NoiseCovariance};
    use crate::discretise::{build_hierarchy, Hierarchy, OperatorKind, OperatorSpec};
    use crate::grid::Grid;
    use crate::rng::ZeroNoise;
    use crate::samplers::{Mgmc, Sampler};
    use crate::sparse::SparseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior(cells: usize, levels: usize, kind: OperatorKind) -> PosteriorProblem {
        let g = Grid::new(2, cells).unwrap();
        let h = build_hierarchy(&g, &OperatorSpec::new(kind, 4.0).unwrap(), None, Some(levels)).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.7).cos()).collect();
        PosteriorProblem::prior(h, f).unwrap()
    }

    #[test]
    fn exact_coarse_gives_zero_x0() {
        let p = prior(4, 1, OperatorKind::ShiftedLaplaceFem);
        let params = CycleParams {
            coarse: CoarseMode::Cholesky,
            ..CycleParams::default()
        };
        let b = build_iteration_bundle(&p, &params).unwrap();
        assert_eq!(b.levels[0].x.abs().max(), 0.0);
        assert_eq!(b.s0_coarse.abs().max(), 0.0);
    }

    #[test]
    fn one_level_exact_splitting() {
        // M = A: X = 0 and Y = A⁻¹
        let p = prior(4, 0, OperatorKind::ShiftedLaplaceFd);
        let params = CycleParams {
            coarse: CoarseMode::Cholesky,
            ..CycleParams::default()
        };
        let b = build_iteration_bundle(&p, &params).unwrap();
        let lvl = b.finest();
        assert_eq!(lvl.x.abs().max(), 0.0);
        assert!((&lvl.y - &lvl.a_inv).abs().max() < 1e-15);
    }

    #[test]
    fn deterministic_cycle_matches_iteration_matrix() {
        let p = prior(4, 1, OperatorKind::ShiftedLaplaceFd);
        for coarse in [CoarseMode::Smoother, CoarseMode::Cholesky] {
            let params = CycleParams {
                coarse,
                ..CycleParams::default()
            };
            let bundle = build_iteration_bundle(&p, &params).unwrap();
            let x = &bundle.finest().x;
            assert!(spectral_radius(x) < 1.0);
            let mg = Mgmc::new(&p, params).unwrap();
            let mut ws = mg.workspace();
            let exact = &bundle.finest().a_inv * DVector::from_column_slice(p.rhs());
            let mut theta = vec![1.0; p.dim()];
            let mut err = DVector::from_column_slice(&theta) - &exact;
            for _ in 0..6 {
                mg.step(&mut theta, &mut ws, &mut ZeroNoise).unwrap();
                err = x * err;
                let got = DVector::from_column_slice(&theta) - &exact;
                assert!((got - &err).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn energy_norm_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = DenseMatrix::from_fn(5, 5, |_, _| rng.random::<f64>() - 0.5);
        let a = &g * g.transpose() + DenseMatrix::identity(5, 5);
        assert_eq!(energy_norm_of(&DenseMatrix::zeros(5, 5), &a).unwrap(), 0.0);
        let c = energy_norm_of(&(DenseMatrix::identity(5, 5) * -0.3), &a).unwrap();
        assert!((c - 0.3).abs() < 1e-12);
        // ‖A^{1/2}XA^{-1/2}‖₂² = λ_max(A⁻¹XᵀAX), and with A = LLᵀ that matrix
        // is similar to the symmetric L⁻¹XᵀAXL⁻ᵀ
        let x = DenseMatrix::from_fn(5, 5, |_, _| rng.random::<f64>() * 0.2);
        let chol = a.clone().cholesky().unwrap();
        let l = chol.l();
        let linv = dense_inverse(&l).unwrap();
        let m = &linv * x.transpose() * &a * &x * linv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let lam = nalgebra::SymmetricEigen::new(m).eigenvalues.max();
        assert!((energy_norm_of(&x, &a).unwrap() - lam.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn smoothing_property_trivial_cases() {
        let a = DenseMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let l = check_smoothing_property(&(&a * 2.0), &a).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert!(check_smoothing_property(&a, &a).unwrap().abs() < 1e-15);
        let lower = DenseMatrix::from_row_slice(2, 2, &[2.0, 0.0, -1.0, 2.0]);
        assert!(matches!(
            check_smoothing_property(&lower, &a),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sgs_smoothing_property_on_posterior() {
        let g = Grid::new(2, 5).unwrap();
        let b = ball_average_rows(&g, &[vec![0.4, 0.4], vec![0.6, 0.6]], 0.15).unwrap();
        let h = build_hierarchy(&g, &OperatorSpec::new(OperatorKind::ShiftedLaplaceFem, 100.0).unwrap(), Some(b), Some(0))
            .unwrap();
        let p = PosteriorProblem::new(h, NoiseCovariance::Diagonal(vec![1e-6, 2e-6]), vec![1.0, 2.0]).unwrap();
        let a = p.dense_precision(0).unwrap();
        let m = symmetrized_splitting(&dense_forward_splitting(&p, 0, 1.0).unwrap(), &a).unwrap();
        // M^(SGS) = Ã + L (D + BΓ⁻¹Bᵀ)⁻¹ Lᵀ
        let ad = p.a(0).to_dense();
        let n = ad.nrows();
        let lower = DenseMatrix::from_fn(n, n, |i, j| if j < i { ad[(i, j)] } else { 0.0 });
        let bd = p.b(0).to_dense();
        let dl = DenseMatrix::from_diagonal(&ad.diagonal()) + &bd * p.gamma().inverse_dense().unwrap() * bd.transpose();
        let expect = &a + &lower * dense_inverse(&dl).unwrap() * lower.transpose();
        assert!((&m - &expect).abs().max() < 1e-6 * a.abs().max());
        let lam = check_smoothing_property(&m, &a).unwrap();
        assert!(lam >= -1e-12 * a.abs().max(), "{lam}");
    }

    #[test]
    fn approximation_property_trivial() {
        let p = prior(4, 0, OperatorKind::ShiftedLaplaceFem);
        assert!(check_approximation_property(&p, 1.0).unwrap().is_empty());
        let a = p.dense_precision(0).unwrap();
        let id = DenseMatrix::identity(a.nrows(), a.ncols());
        let c = approximation_constant(&a, &a, &a, &id).unwrap();
        assert!(c < 1e-12);
    }

    #[test]
    fn approximation_constants_bounded_across_levels() {
        let p = prior(8, 2, OperatorKind::ShiftedLaplaceFem);
        let c = check_approximation_property(&p, 1.0).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|&v| v.is_finite() && v > 0.0 && v < 10.0), "{c:?}");
        assert!(c[1] / c[0] < 2.0, "{c:?}");
    }

    #[test]
    fn exact_iact_trivial_cases() {
        let a = DenseMatrix::identity(3, 3) * 2.0;
        let f = [1.0, 0.5, -1.0];
        assert!((exact_iact(&DenseMatrix::zeros(3, 3), &a, &f).unwrap() - 1.0).abs() < 1e-14);
        let rho = 0.5;
        let tau = exact_iact(&(DenseMatrix::identity(3, 3) * rho), &a, &f).unwrap();
        assert!((tau - 3.0).abs() < 1e-12);
        assert!(matches!(
            exact_iact(&DenseMatrix::identity(3, 3), &a, &f),
            Err(Error::Divergent { .. })
        ));
        assert!((iact_bound(0.5).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn moment_recursion_fixed_point_and_limit() {
        let p = prior(4, 1, OperatorKind::ShiftedLaplaceFd);
        let b = build_iteration_bundle(&p, &CycleParams::default()).unwrap();
        let lvl = b.finest();
        let f = p.rhs();
        let target = &lvl.a_inv * DVector::from_column_slice(f);
        let (m, c) = moment_recursions(&lvl.x, &lvl.y, &lvl.k, f, &target, &lvl.a_inv, 5);
        assert!((m - &target).abs().max() < 1e-12);
        assert!((c - &lvl.a_inv).abs().max() < 1e-12);
        let n = target.len();
        let (m, c) = moment_recursions(
            &lvl.x,
            &lvl.y,
            &lvl.k,
            f,
            &DVector::zeros(n),
            &DenseMatrix::zeros(n, n),
            200,
        );
        assert!((m - &target).abs().max() < 1e-10);
        assert!((c - &lvl.a_inv).abs().max() < 1e-10);
        let cross = cross_covariance(&lvl.x, &lvl.a_inv, 0);
        assert_eq!(cross, lvl.a_inv);
    }

    #[test]
    fn hierarchy_from_matrices_works_with_oracle() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 2.0)],
        )
        .unwrap();
        let p = SparseMatrix::from_triplets(3, 1, vec![(0, 0, 0.5), (1, 0, 1.0), (2, 0, 0.5)]).unwrap();
        let h = Hierarchy::from_matrices(a, None, vec![p]).unwrap();
        let prob = PosteriorProblem::prior(h, vec![1.0, 0.0, 1.0]).unwrap();
        let b = build_iteration_bundle(&prob, &CycleParams::default()).unwrap();
        assert!(energy_norm_of(&b.finest().x, &b.finest().a).unwrap() < 1.0);
    }
}
