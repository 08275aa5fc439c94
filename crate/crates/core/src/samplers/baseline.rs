use crate::bayes::PosteriorProblem;
use crate::cholesky::TriangularFactor;
use crate::error::{check_len, Result};
use crate::rng::NoiseSource;
use crate::splitting::Direction;

use super::gibbs::{GibbsWorkspace, LowRankGibbs};
use super::Sampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GibbsSchedule {
    /// A single sweep in one direction.
    Single(Direction),
    /// `ν` symmetric (forward then backward) sweeps.
    Symmetric(usize),
}

/// Single-level low-rank Gibbs sampler on the finest level.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    smoother: LowRankGibbs<'a>,
    schedule: GibbsSchedule,
    rhs: &'a [f64],
}

impl<'a> GibbsSampler<'a> {
    pub fn new(problem: &'a PosteriorProblem, omega: f64, schedule: GibbsSchedule) -> Result<Self> {
        let top = problem.hierarchy().finest();
        Ok(Self {
            smoother: LowRankGibbs::new(problem, top, omega)?,
            schedule,
            rhs: problem.rhs(),
        })
    }

    /// `ν_G` symmetric sweeps with `ω = 1`.
    pub fn baseline(problem: &'a PosteriorProblem, nu_g: usize) -> Result<Self> {
        Self::new(problem, 1.0, GibbsSchedule::Symmetric(nu_g))
    }

    pub fn smoother(&self) -> &LowRankGibbs<'a> {
        &self.smoother
    }
}

impl Sampler for GibbsSampler<'_> {
    type Workspace = GibbsWorkspace;

    fn dim(&self) -> usize {
        self.smoother.dim()
    }

    fn workspace(&self) -> GibbsWorkspace {
        self.smoother.workspace()
    }

    fn step<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        ws: &mut GibbsWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        match self.schedule {
            GibbsSchedule::Single(dir) => self.smoother.sweep(dir, self.rhs, theta, ws, noise),
            GibbsSchedule::Symmetric(nu) => {
                for _ in 0..nu {
                    self.smoother.symmetric_sweep(self.rhs, theta, ws, noise)?;
                }
                Ok(())
            }
        }
    }
}

/// Independent exact draws from a sparse Cholesky factor of `Ã_L`.
#[derive(Debug, Clone)]
pub struct CholeskySampler<'a> {
    factor: TriangularFactor,
    rhs: &'a [f64],
}

impl<'a> CholeskySampler<'a> {
    pub fn new(problem: &'a PosteriorProblem) -> Result<Self> {
        let factor = problem.factorize(problem.hierarchy().finest())?;
        Ok(Self {
            factor,
            rhs: problem.rhs(),
        })
    }

    pub fn factor(&self) -> &TriangularFactor {
        &self.factor
    }

    pub fn draw<N: NoiseSource + ?Sized>(&self, noise: &mut N) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.factor.dim()];
        noise.fill_standard_normal(&mut z);
        self.factor.sample(self.rhs, &z)
    }
}

impl Sampler for CholeskySampler<'_> {
    type Workspace = Vec<f64>;

    fn dim(&self) -> usize {
        self.factor.dim()
    }

    fn workspace(&self) -> Vec<f64> {
        vec![0.0; self.factor.dim()]
    }

    fn step<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        z: &mut Vec<f64>,
        noise: &mut N,
    ) -> Result<()> {
        check_len("cholesky draw", self.dim(), theta.len())?;
        noise.fill_standard_normal(z);
        let draw = self.factor.sample(self.rhs, z)?;
        theta.copy_from_slice(&draw);
        Ok(())
    }
}
