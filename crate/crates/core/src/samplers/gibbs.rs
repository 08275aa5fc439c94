use crate::bayes::{precompute_lowrank, LowRankPrecompute, PosteriorProblem};
use crate::error::{check_len, Result};
use crate::rng::NoiseSource;
use crate::splitting::{sor_sweep, Direction};

/// Gibbs/SOR smoother with low-rank correction on one level.
///
/// One sweep draws `ξ = √((2−ω)/ω) D^{1/2} z + B ξ_LR` with `ξ_LR ~ N(0, Γ⁻¹)`,
/// performs `θ* = θ + M⁻¹(f + ξ − Aθ)` as an in-place sweep and finishes
/// with `θ' = θ* − B*(Bᵀθ*)`. Standard normals are drawn in that order:
/// `n` for `z`, then `β` for `ξ_LR`.
#[derive(Debug, Clone)]
pub struct LowRankGibbs<'a> {
    problem: &'a PosteriorProblem,
    level: usize,
    omega: f64,
    forward: LowRankPrecompute,
    backward: LowRankPrecompute,
    noise_scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GibbsWorkspace {
    rhs: Vec<f64>,
    lowrank: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> LowRankGibbs<'a> {
    pub fn new(problem: &'a PosteriorProblem, level: usize, omega: f64) -> Result<Self> {
        let a = problem.a(level);
        let b = problem.b(level);
        let forward = precompute_lowrank(a, b, problem.gamma(), omega, Direction::Forward)?;
        let backward = precompute_lowrank(a, b, problem.gamma(), omega, Direction::Backward)?;
        let c = (2.0 - omega) / omega;
        let noise_scale = forward.diag.iter().map(|d| (c * d).sqrt()).collect();
        Ok(Self {
            problem,
            level,
            omega,
            forward,
            backward,
            noise_scale,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn dim(&self) -> usize {
        self.noise_scale.len()
    }

    pub fn precompute(&self, direction: Direction) -> &LowRankPrecompute {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn workspace(&self) -> GibbsWorkspace {
        let beta = self.problem.beta();
        GibbsWorkspace {
            rhs: vec![0.0; self.dim()],
            lowrank: vec![0.0; beta],
            scratch: vec![0.0; beta],
        }
    }

    /// One forward or backward low-rank Gibbs sweep with right-hand side `f`.
    pub fn sweep<N: NoiseSource + ?Sized>(
        &self,
        direction: Direction,
        f: &[f64],
        theta: &mut [f64],
        ws: &mut GibbsWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        check_len("low-rank Gibbs sweep (θ)", self.dim(), theta.len())?;
        check_len("low-rank Gibbs sweep (f)", self.dim(), f.len())?;
        noise.fill_standard_normal(&mut ws.rhs);
        for ((r, &fi), &s) in ws.rhs.iter_mut().zip(f).zip(&self.noise_scale) {
            *r = fi + s * *r;
        }
        let b = self.problem.b(self.level);
        if !ws.lowrank.is_empty() {
            noise.fill_standard_normal(&mut ws.lowrank);
            self.problem.gamma().color_inverse(&mut ws.lowrank);
            for (i, r) in ws.rhs.iter_mut().enumerate() {
                let (cols, vals) = b.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    *r += v * ws.lowrank[j];
                }
            }
        }
        let pre = self.precompute(direction);
        sor_sweep(
            self.problem.a(self.level),
            &pre.diag,
            self.omega,
            direction,
            &ws.rhs,
            theta,
        );
        pre.correct(self.problem.bt(self.level), theta, &mut ws.scratch);
        Ok(())
    }

    /// Forward sweep followed by a backward sweep.
    pub fn symmetric_sweep<N: NoiseSource + ?Sized>(
        &self,
        f: &[f64],
        theta: &mut [f64],
        ws: &mut GibbsWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        self.sweep(Direction::Forward, f, theta, ws, noise)?;
        self.sweep(Direction::Backward, f, theta, ws, noise)
    }
}
