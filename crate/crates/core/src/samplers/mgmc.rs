use crate::bayes::PosteriorProblem;
use crate::cholesky::TriangularFactor;
use crate::error::{check_len, Result};
use crate::rng::NoiseSource;
use crate::splitting::Direction;

use super::gibbs::{GibbsWorkspace, LowRankGibbs};
use super::{CoarseMode, CycleParams, Sampler, Smoothing};

/// Multigrid Monte Carlo update on a posterior hierarchy.
///
/// Pre-smoothing uses forward low-rank Gibbs sweeps and post-smoothing
/// backward sweeps, or symmetric sweeps on both sides. Noise is drawn in execution order: pre-smoothers,
/// the recursive coarse calls, then post-smoothers.
#[derive(Debug, Clone)]
pub struct Mgmc<'a> {
    problem: &'a PosteriorProblem,
    params: CycleParams,
    smoothers: Vec<LowRankGibbs<'a>>,
    coarse_factor: Option<TriangularFactor>,
}

#[derive(Debug, Clone)]
struct LevelWorkspace {
    f: Vec<f64>,
    theta: Vec<f64>,
    resid: Vec<f64>,
    scratch: Vec<f64>,
    z: Vec<f64>,
    gibbs: GibbsWorkspace,
}

#[derive(Debug, Clone)]
pub struct MgmcWorkspace {
    levels: Vec<LevelWorkspace>,
}

impl<'a> Mgmc<'a> {
    pub fn new(problem: &'a PosteriorProblem, params: CycleParams) -> Result<Self> {
        params.validate()?;
        let nlev = problem.hierarchy().levels().len();
        let smoothers = (0..nlev)
            .map(|l| LowRankGibbs::new(problem, l, params.omega))
            .collect::<Result<Vec<_>>>()?;
        let coarse_factor = match params.coarse {
            CoarseMode::Cholesky => Some(problem.factorize(0)?),
            CoarseMode::Smoother => None,
        };
        Ok(Self {
            problem,
            params,
            smoothers,
            coarse_factor,
        })
    }

    pub fn params(&self) -> &CycleParams {
        &self.params
    }

    pub fn problem(&self) -> &PosteriorProblem {
        self.problem
    }

    /// Run one cycle starting at `level` with right-hand side `f`.
    pub fn cycle<N: NoiseSource + ?Sized>(
        &self,
        level: usize,
        theta: &mut [f64],
        f: &[f64],
        ws: &mut MgmcWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        check_len("mgmc cycle (θ)", self.problem.a(level).nrows(), theta.len())?;
        check_len("mgmc cycle (f)", theta.len(), f.len())?;
        self.cycle_inner(level, theta, f, &mut ws.levels[..=level], noise)
    }

    /// Coarse-level sampler on level 0.
    pub fn coarse_sample<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        f: &[f64],
        ws: &mut MgmcWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        self.coarse(theta, f, &mut ws.levels[0], noise)
    }

    fn coarse<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        f: &[f64],
        ws: &mut LevelWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        match &self.coarse_factor {
            Some(factor) => {
                noise.fill_standard_normal(&mut ws.z);
                let draw = factor.sample(f, &ws.z)?;
                theta.copy_from_slice(&draw);
            }
            None => {
                for _ in 0..self.params.nu0 {
                    self.smoothers[0].symmetric_sweep(f, theta, &mut ws.gibbs, noise)?;
                }
            }
        }
        Ok(())
    }

    fn cycle_inner<N: NoiseSource + ?Sized>(
        &self,
        level: usize,
        theta: &mut [f64],
        f: &[f64],
        ws: &mut [LevelWorkspace],
        noise: &mut N,
    ) -> Result<()> {
        if level == 0 {
            return self.coarse(theta, f, &mut ws[0], noise);
        }
        let (lower, upper) = ws.split_at_mut(level);
        let here = &mut upper[0];
        let smoother = &self.smoothers[level];

        for _ in 0..self.params.nu1 {
            if self.params.smoothing == Smoothing::Symmetric {
                smoother.symmetric_sweep(f, theta, &mut here.gibbs, noise)?;
                continue;
            }
            smoother.sweep(Direction::Forward, f, theta, &mut here.gibbs, noise)?;
        }

        // restrict f − Ãθ
        self.problem
            .apply_precision(level, theta, &mut here.resid, &mut here.scratch);
        here.resid.iter_mut().zip(f).for_each(|(r, fi)| *r = fi - *r);
        let lvl = self.problem.hierarchy().level(level);
        let restriction = lvl.restriction.as_ref().expect("level ≥ 1 has R");
        let prolongation = lvl.prolongation.as_ref().expect("level ≥ 1 has P");
        let coarse = &mut lower[level - 1];
        let mut cf = std::mem::take(&mut coarse.f);
        let mut psi = std::mem::take(&mut coarse.theta);
        restriction.mul_vec_into(&here.resid, &mut cf);
        psi.fill(0.0);

        let gamma = self.params.gamma(level, self.problem.hierarchy().finest());
        let mut result = Ok(());
        for _ in 0..gamma {
            result = self.cycle_inner(level - 1, &mut psi, &cf, lower, noise);
            if result.is_err() {
                break;
            }
        }
        if result.is_ok() {
            for (i, t) in theta.iter_mut().enumerate() {
                let (cols, vals) = prolongation.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    *t += v * psi[j];
                }
            }
        }
        let coarse = &mut lower[level - 1];
        coarse.f = cf;
        coarse.theta = psi;
        result?;

        for _ in 0..self.params.nu2 {
            if self.params.smoothing == Smoothing::Symmetric {
                smoother.symmetric_sweep(f, theta, &mut here.gibbs, noise)?;
                continue;
            }
            smoother.sweep(Direction::Backward, f, theta, &mut here.gibbs, noise)?;
        }
        Ok(())
    }
}

impl Sampler for Mgmc<'_> {
    type Workspace = MgmcWorkspace;

    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn workspace(&self) -> MgmcWorkspace {
        let beta = self.problem.beta();
        let levels = self
            .smoothers
            .iter()
            .map(|s| {
                let n = s.dim();
                LevelWorkspace {
                    f: vec![0.0; n],
                    theta: vec![0.0; n],
                    resid: vec![0.0; n],
                    scratch: vec![0.0; beta],
                    z: vec![0.0; n],
                    gibbs: s.workspace(),
                }
            })
            .collect();
        MgmcWorkspace { levels }
    }

    fn step<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        ws: &mut MgmcWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        let top = self.problem.hierarchy().finest();
        self.cycle(top, theta, self.problem.rhs(), ws, noise)
    }
}
