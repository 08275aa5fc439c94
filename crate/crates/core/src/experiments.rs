//! Experiment drivers behind the CLI subcommands.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{ball_average_rows, ObservationSet, PosteriorProblem};
use crate::cholesky::TriangularFactor;
use crate::config::{RunConfig, SamplerKind};
use crate::discretise::build_hierarchy;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{NoiseSource, RngStream};
use crate::samplers::{
    CholeskySampler, GibbsSampler, GibbsWorkspace, Mgmc, MgmcWorkspace, Sampler,
};
use crate::stats::{
    autocorrelation, convergence_rate, convergence_ratios, dot, iact_wolff, qoi_vector,
    rmse_curve,
};

/// A posterior on one grid together with its quantity of interest.
pub struct Setup {
    pub grid: Grid,
    pub observations: ObservationSet,
    pub problem: PosteriorProblem,
    pub qoi: Vec<f64>,
    pub seconds: f64,
}

impl Setup {
    pub fn new(cfg: &RunConfig, cells: usize, base: Option<&Path>) -> Result<Self> {
        let start = Instant::now();
        let grid = Grid::new(cfg.problem.dim, cells)?;
        let spec = cfg.problem.operator_spec()?;
        let observations = cfg.observations.build(&grid, cfg.seed, base)?;
        let b = ball_average_rows(&grid, &observations.centers, observations.radius)?;
        let hierarchy = build_hierarchy(&grid, &spec, Some(b), cfg.problem.levels)?;
        let problem =
            PosteriorProblem::new(hierarchy, observations.gamma(), observations.values.clone())?;
        let qoi = qoi_vector(&grid, &cfg.qoi_center(), cfg.experiment.qoi_radius)?;
        Ok(Self {
            grid,
            observations,
            problem,
            qoi,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Exact `μ = Fᵀ Ã⁻¹ f` and `σ² = Fᵀ Ã⁻¹ F` from a factor of `Ã`.
    pub fn reference(&self, factor: &TriangularFactor) -> Result<(f64, f64)> {
        let mean = factor.solve_normal(self.problem.rhs())?;
        let w = factor.solve_transpose(&self.qoi)?;
        Ok((dot(&self.qoi, &mean), dot(&w, &w)))
    }
}

/// One of the configured samplers behind a single type.
pub enum AnySampler<'a> {
    Mgmc(Mgmc<'a>),
    Gibbs(GibbsSampler<'a>),
    Cholesky(CholeskySampler<'a>),
}

pub enum AnyWorkspace {
    Mgmc(MgmcWorkspace),
    Gibbs(GibbsWorkspace),
    Cholesky(Vec<f64>),
}

impl<'a> AnySampler<'a> {
    pub fn new(kind: SamplerKind, problem: &'a PosteriorProblem, cfg: &RunConfig) -> Result<Self> {
        Ok(match kind {
            SamplerKind::Mgmc => AnySampler::Mgmc(Mgmc::new(problem, cfg.sampler.cycle)?),
            SamplerKind::Gibbs => {
                AnySampler::Gibbs(GibbsSampler::baseline(problem, cfg.sampler.nu_g)?)
            }
            SamplerKind::Cholesky => AnySampler::Cholesky(CholeskySampler::new(problem)?),
        })
    }

    pub fn kind(&self) -> SamplerKind {
        match self {
            AnySampler::Mgmc(_) => SamplerKind::Mgmc,
            AnySampler::Gibbs(_) => SamplerKind::Gibbs,
            AnySampler::Cholesky(_) => SamplerKind::Cholesky,
        }
    }
}

impl Sampler for AnySampler<'_> {
    type Workspace = AnyWorkspace;

    fn dim(&self) -> usize {
        match self {
            AnySampler::Mgmc(s) => s.dim(),
            AnySampler::Gibbs(s) => s.dim(),
            AnySampler::Cholesky(s) => s.dim(),
        }
    }

    fn workspace(&self) -> AnyWorkspace {
        match self {
            AnySampler::Mgmc(s) => AnyWorkspace::Mgmc(s.workspace()),
            AnySampler::Gibbs(s) => AnyWorkspace::Gibbs(s.workspace()),
            AnySampler::Cholesky(s) => AnyWorkspace::Cholesky(s.workspace()),
        }
    }

    fn step<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        ws: &mut AnyWorkspace,
        noise: &mut N,
    ) -> Result<()> {
        match (self, ws) {
            (AnySampler::Mgmc(s), AnyWorkspace::Mgmc(w)) => s.step(theta, w, noise),
            (AnySampler::Gibbs(s), AnyWorkspace::Gibbs(w)) => s.step(theta, w, noise),
            (AnySampler::Cholesky(s), AnyWorkspace::Cholesky(w)) => s.step(theta, w, noise),
            _ => Err(Error::InvalidParameter("workspace belongs to another sampler".into())),
        }
    }
}

/// Options for [`run_chain`].
#[derive(Debug, Clone, Copy)]
pub struct ChainPlan {
    pub warmup: usize,
    pub steps: usize,
    /// Record `z` of the starting state as the first value.
    pub include_start: bool,
}

/// Run one chain from `theta` and return the QoI series. When
/// `include_start` is set the series is `z⁽⁰⁾..z⁽ᴹ⁻¹⁾` with `z⁽⁰⁾` the
/// state after warmup; otherwise it holds the `M` states after each update.
pub fn run_chain<S: Sampler>(
    sampler: &S,
    theta: &mut [f64],
    ws: &mut S::Workspace,
    qoi: &[f64],
    plan: ChainPlan,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    for _ in 0..plan.warmup {
        sampler.step(theta, ws, rng)?;
    }
    let mut z = Vec::with_capacity(plan.steps);
    let updates = if plan.include_start {
        z.push(dot(qoi, theta));
        plan.steps.saturating_sub(1)
    } else {
        plan.steps
    };
    for _ in 0..updates {
        sampler.step(theta, ws, rng)?;
        z.push(dot(qoi, theta));
    }
    Ok(z)
}

/// `n` independent chains from `θ = 0`; chain `j` uses stream `j` of `seed`,
/// so results do not depend on how chains are spread over threads.
pub fn run_chains<S: Sampler>(
    sampler: &S,
    qoi: &[f64],
    plan: ChainPlan,
    chains: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..chains)
        .into_par_iter()
        .map_init(
            || (sampler.workspace(), vec![0.0; sampler.dim()]),
            |(ws, theta), j| {
                theta.fill(0.0);
                let mut rng = RngStream::new(seed, j as u64);
                run_chain(sampler, theta, ws, qoi, plan, &mut rng)
            },
        )
        .collect()
}

/// Run `f` on a pool with `threads` workers (all cores when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    pub cells: usize,
    pub unknowns: usize,
    pub sampler: SamplerKind,
    pub setup_seconds: f64,
    pub seconds_per_update: f64,
    pub z: Vec<f64>,
    /// Final state, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

/// A single chain from `θ = 0` with the first configured sampler.
pub fn sample(cfg: &RunConfig, base: Option<&Path>) -> Result<SampleOutput> {
    let cells = cfg.grids()[0];
    let setup = Setup::new(cfg, cells, base)?;
    let start = Instant::now();
    let sampler = AnySampler::new(cfg.sampler.kinds[0], &setup.problem, cfg)?;
    let setup_seconds = setup.seconds + start.elapsed().as_secs_f64();
    let mut theta = vec![0.0; setup.problem.dim()];
    let mut ws = sampler.workspace();
    let mut rng = RngStream::new(cfg.seed, 0);
    let plan = ChainPlan {
        warmup: cfg.experiment.warmup,
        steps: cfg.experiment.steps,
        include_start: false,
    };
    let start = Instant::now();
    let z = run_chain(&sampler, &mut theta, &mut ws, &setup.qoi, plan, &mut rng)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(SampleOutput {
        cells,
        unknowns: setup.problem.dim(),
        sampler: sampler.kind(),
        setup_seconds,
        seconds_per_update: seconds / (plan.warmup + plan.steps) as f64,
        z,
        theta: cfg.experiment.write_states.then_some(theta),
    })
}

/// One row of the performance table. The schema is the same for every
/// sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub cells: usize,
    pub unknowns: usize,
    pub sampler: SamplerKind,
    pub tau: f64,
    pub tau_stderr: f64,
    pub window: usize,
    pub reliable: bool,
    pub seconds_per_sample: f64,
    pub seconds_per_independent_sample: f64,
    pub setup_seconds: f64,
    pub steps: usize,
    pub warmup: usize,
}

/// Measure IACT and cost of every configured sampler on every grid.
///
/// Setup (hierarchy, factorisations, low-rank precomputation) is timed
/// separately from the updates. Cholesky draws are independent, so their
/// IACT is 1 by definition. An IACT is flagged unreliable when the window
/// search fails or the chain is shorter than `reliability_factor · τ̂`.
pub fn performance(cfg: &RunConfig, base: Option<&Path>) -> Result<Vec<PerformanceRow>> {
    let e = &cfg.experiment;
    let mut rows = Vec::new();
    for cells in cfg.grids() {
        let setup = Setup::new(cfg, cells, base)?;
        for (k, &kind) in cfg.sampler.kinds.iter().enumerate() {
            let start = Instant::now();
            let sampler = AnySampler::new(kind, &setup.problem, cfg)?;
            let setup_seconds = setup.seconds + start.elapsed().as_secs_f64();
            let mut theta = vec![0.0; setup.problem.dim()];
            let mut ws = sampler.workspace();
            let mut rng = RngStream::new(cfg.seed, k as u64);
            let warm = ChainPlan {
                warmup: e.warmup,
                steps: 0,
                include_start: false,
            };
            run_chain(&sampler, &mut theta, &mut ws, &setup.qoi, warm, &mut rng)?;
            let plan = ChainPlan {
                warmup: 0,
                steps: e.steps,
                include_start: true,
            };
            let start = Instant::now();
            let z = run_chain(&sampler, &mut theta, &mut ws, &setup.qoi, plan, &mut rng)?;
            let per_sample = start.elapsed().as_secs_f64() / e.steps as f64;

            let (tau, tau_stderr, window, reliable) = if kind == SamplerKind::Cholesky {
                (1.0, 0.0, 0, true)
            } else {
                match iact_wolff(&z, e.window_factor) {
                    Ok(est) => {
                        let ok = (e.steps as f64) >= e.reliability_factor * est.tau;
                        (est.tau, est.stderr, est.window, ok)
                    }
                    Err(Error::UnreliableIact { .. }) => (f64::NAN, f64::NAN, 0, false),
                    Err(err) => return Err(err),
                }
            };
            rows.push(PerformanceRow {
                cells,
                unknowns: setup.problem.dim(),
                sampler: kind,
                tau,
                tau_stderr,
                window,
                reliable,
                seconds_per_sample: per_sample,
                seconds_per_independent_sample: per_sample * tau,
                setup_seconds,
                steps: e.steps,
                warmup: e.warmup,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub sampler: SamplerKind,
    pub step: usize,
    pub mean_ratio: f64,
    pub var_ratio: f64,
    pub mean_rel_err: f64,
    pub var_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub cells: usize,
    pub sampler: SamplerKind,
    pub kappa_sq: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub rho: f64,
    pub zeta: f64,
}

/// Ensemble convergence of the QoI mean and variance from `θ = 0`.
pub fn convergence(
    cfg: &RunConfig,
    base: Option<&Path>,
) -> Result<(Vec<ConvergenceRow>, Vec<ConvergenceSummary>)> {
    let e = &cfg.experiment;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for cells in cfg.grids() {
        let setup = Setup::new(cfg, cells, base)?;
        let factor = setup.problem.factorize(setup.problem.hierarchy().finest())?;
        let (mu, sigma_sq) = setup.reference(&factor)?;
        for &kind in &cfg.sampler.kinds {
            let sampler = AnySampler::new(kind, &setup.problem, cfg)?;
            let plan = ChainPlan {
                warmup: 0,
                steps: e.steps + 1,
                include_start: true,
            };
            let chains = run_chains(&sampler, &setup.qoi, plan, e.chains, cfg.seed)?;
            let r = convergence_ratios(&chains, mu, sigma_sq)?;
            for m in 0..r.mean_ratio.len() {
                rows.push(ConvergenceRow {
                    cells,
                    sampler: kind,
                    step: m,
                    mean_ratio: r.mean_ratio[m],
                    var_ratio: r.var_ratio[m],
                    mean_rel_err: r.mean_rel_err[m],
                    var_rel_err: r.var_rel_err[m],
                });
            }
            summary.push(ConvergenceSummary {
                cells,
                sampler: kind,
                kappa_sq: cfg.problem.operator_spec()?.kappa_sq,
                mu,
                sigma_sq,
                rho: convergence_rate(&r.mean_ratio, &r.mean_rel_err, e.max_rel_err),
                zeta: convergence_rate(&r.var_ratio, &r.var_rel_err, e.max_rel_err),
            });
        }
    }
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationRow {
    pub cells: usize,
    pub sampler: SamplerKind,
    pub lag: usize,
    pub rho: f64,
}

/// Normalised autocorrelation `Γ̂(t)/Γ̂(0)` of a post-warmup chain per
/// sampler and grid, together with the IACT rows.
pub fn autocorrelation_experiment(
    cfg: &RunConfig,
    base: Option<&Path>,
) -> Result<(Vec<AutocorrelationRow>, Vec<PerformanceRow>)> {
    let e = &cfg.experiment;
    let perf = performance(cfg, base)?;
    let mut rows = Vec::new();
    for cells in cfg.grids() {
        let setup = Setup::new(cfg, cells, base)?;
        for (k, &kind) in cfg.sampler.kinds.iter().enumerate() {
            let sampler = AnySampler::new(kind, &setup.problem, cfg)?;
            let mut theta = vec![0.0; setup.problem.dim()];
            let mut ws = sampler.workspace();
            let mut rng = RngStream::new(cfg.seed, k as u64);
            let plan = ChainPlan {
                warmup: e.warmup,
                steps: e.steps,
                include_start: true,
            };
            let z = run_chain(&sampler, &mut theta, &mut ws, &setup.qoi, plan, &mut rng)?;
            let g0 = autocorrelation(&z, 0)?;
            for lag in 0..=e.max_lag.min(z.len() - 1) {
                let rho = if g0 > 0.0 { autocorrelation(&z, lag)? / g0 } else { f64::NAN };
                rows.push(AutocorrelationRow {
                    cells,
                    sampler: kind,
                    lag,
                    rho,
                });
            }
        }
    }
    Ok((rows, perf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub cells: usize,
    pub sampler: SamplerKind,
    pub length: usize,
    pub rmse: f64,
    pub mu: f64,
}

/// RMSE of the running QoI average over independent chains from `θ = 0`.
pub fn rmse(cfg: &RunConfig, base: Option<&Path>) -> Result<Vec<RmseRow>> {
    let e = &cfg.experiment;
    let lengths = cfg.rmse_lengths();
    let mut rows = Vec::new();
    for cells in cfg.grids() {
        let setup = Setup::new(cfg, cells, base)?;
        let factor = setup.problem.factorize(setup.problem.hierarchy().finest())?;
        let (mu, _) = setup.reference(&factor)?;
        for &kind in &cfg.sampler.kinds {
            let sampler = AnySampler::new(kind, &setup.problem, cfg)?;
            let plan = ChainPlan {
                warmup: 0,
                steps: e.steps,
                include_start: true,
            };
            let chains = run_chains(&sampler, &setup.qoi, plan, e.chains, cfg.seed)?;
            let curve = rmse_curve(&chains, mu, &lengths)?;
            for (&length, &r) in lengths.iter().zip(&curve) {
                rows.push(RmseRow {
                    cells,
                    sampler: kind,
                    length,
                    rmse: r,
                    mu,
                });
            }
        }
    }
    Ok(rows)
}

/// Median wall-clock seconds per update over `blocks` blocks of
/// `block_len` updates, after `warmup` untimed updates from `θ = 0`.
pub fn median_update_seconds<S: Sampler>(
    sampler: &S,
    warmup: usize,
    blocks: usize,
    block_len: usize,
    seed: u64,
) -> Result<f64> {
    let mut theta = vec![0.0; sampler.dim()];
    let mut ws = sampler.workspace();
    let mut rng = RngStream::new(seed, 0);
    for _ in 0..warmup {
        sampler.step(&mut theta, &mut ws, &mut rng)?;
    }
    let mut times = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let start = Instant::now();
        for _ in 0..block_len {
            sampler.step(&mut theta, &mut ws, &mut rng)?;
        }
        times.push(start.elapsed().as_secs_f64() / block_len as f64);
    }
    Ok(crate::stats::median(&times))
}
