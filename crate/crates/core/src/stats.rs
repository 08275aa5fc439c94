//! Estimators on scalar chain output: autocorrelation, IACT with automatic
//! windowing, convergence ratios and rates, and RMSE of chain averages.

use serde::{Deserialize, Serialize};

use crate::bayes::ball_average_rows;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default proportionality factor of the automatic window.
pub const DEFAULT_WINDOW_FACTOR: f64 = 1.5;

/// Minimum series length accepted by [`iact_wolff`].
pub const MIN_IACT_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub sampler: String,
    pub cells: usize,
    pub seed: u64,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub values: Vec<f64>,
    pub meta: SeriesMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IactEstimate {
    pub tau: f64,
    pub stderr: f64,
    pub window: usize,
}

/// Ball-average quantity of interest `F` with `z = Fᵀθ`.
pub fn qoi_vector(grid: &Grid, center: &[f64], radius: f64) -> Result<Vec<f64>> {
    let b = ball_average_rows(grid, &[center.to_vec()], radius)?;
    let mut f = vec![0.0; grid.len()];
    for (i, _, v) in b.triplets() {
        f[i] = v;
    }
    Ok(f)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n − 1` denominator.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn autocov_centered(c: &[f64], t: usize) -> f64 {
    let m = c.len();
    c[..m - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / (m - t) as f64
}

fn centered(series: &[f64]) -> Vec<f64> {
    let m = mean(series);
    series.iter().map(|v| v - m).collect()
}

/// `Γ̂(t) = 1/(M−t) Σ_m (z_m − z̄)(z_{m+t} − z̄)`.
pub fn autocorrelation(series: &[f64], t: usize) -> Result<f64> {
    if t >= series.len() {
        return Err(Error::LagOutOfRange {
            lag: t,
            len: series.len(),
        });
    }
    Ok(autocov_centered(&centered(series), t))
}

/// `τ̂(W) = 1 + 2 Σ_{t=1}^{W} Γ̂(t)/Γ̂(0)` for a fixed window.
pub fn iact_with_window(series: &[f64], window: usize) -> Result<f64> {
    if window >= series.len() {
        return Err(Error::LagOutOfRange {
            lag: window,
            len: series.len(),
        });
    }
    let c = centered(series);
    let g0 = autocov_centered(&c, 0);
    if g0 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 + 2.0 * (1..=window).map(|t| autocov_centered(&c, t)).sum::<f64>() / g0)
}

/// IACT with automatic windowing.
///
/// The window is the first `W` with `exp(−W/τ_W) − τ_W/√(W M) < 0`, where
/// `τ_W = S / ln((τ̂+1)/(τ̂−1))` is derived from the running estimate
/// `τ̂(W)`. Error bar: `τ̂ √(2(2W+1)/M)`.
pub fn iact_wolff(series: &[f64], window_factor: f64) -> Result<IactEstimate> {
    let m = series.len();
    if m < MIN_IACT_LEN {
        return Err(Error::InvalidParameter(format!(
            "IACT needs at least {MIN_IACT_LEN} samples, got {m}"
        )));
    }
    let c = centered(series);
    let g0 = autocov_centered(&c, 0);
    if g0 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mf = m as f64;
    let mut sum = 0.0;
    for w in 1..m / 2 {
        sum += autocov_centered(&c, w) / g0;
        let tau = 1.0 + 2.0 * sum;
        let tau_w = if tau > 1.0 {
            window_factor / ((tau + 1.0) / (tau - 1.0)).ln()
        } else {
            f64::MIN_POSITIVE
        };
        let wf = w as f64;
        let g = (-wf / tau_w).exp() - tau_w / (wf * mf).sqrt();
        if g < 0.0 {
            return Ok(IactEstimate {
                tau,
                stderr: tau * (2.0 * (2.0 * wf + 1.0) / mf).sqrt(),
                window: w,
            });
        }
    }
    Err(Error::UnreliableIact { len: m })
}

/// Effective sample size `M / τ̂`.
pub fn effective_sample_size(series: &[f64], window_factor: f64) -> Result<f64> {
    Ok(series.len() as f64 / iact_wolff(series, window_factor)?.tau)
}

/// Per-step ratios of the ensemble mean and variance deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRatios {
    /// `R̂^(m) = |μ̂^(m) − μ| / |μ̂^(0) − μ|`.
    pub mean_ratio: Vec<f64>,
    /// `Ẑ^(m) = |σ̂²^(m) − σ²| / |σ̂²^(0) − σ²|`.
    pub var_ratio: Vec<f64>,
    /// Relative statistical error of each `R̂^(m)`.
    pub mean_rel_err: Vec<f64>,
    /// Relative statistical error of each `Ẑ^(m)`.
    pub var_rel_err: Vec<f64>,
}

/// `chains[j][m]` is the quantity of interest of chain `j` after `m` steps.
/// The ensemble mean has standard error `σ̂/√n` and the sample variance
/// `σ̂²√(2/(n−1))`; relative errors divide these by the deviation from the
/// target at the same step.
pub fn convergence_ratios(chains: &[Vec<f64>], mu: f64, sigma_sq: f64) -> Result<ConvergenceRatios> {
    let n = chains.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two chains".into()));
    }
    let steps = chains[0].len();
    if chains.iter().any(|c| c.len() != steps) || steps == 0 {
        return Err(Error::InvalidParameter("chains must have equal nonzero length".into()));
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(steps);
    let mut vars = Vec::with_capacity(steps);
    for m in 0..steps {
        let col: Vec<f64> = chains.iter().map(|c| c[m]).collect();
        means.push(mean(&col));
        vars.push(sample_variance(&col));
    }
    let d_mean = (means[0] - mu).abs();
    let d_var = (vars[0] - sigma_sq).abs();
    if d_mean == 0.0 || d_var == 0.0 {
        return Err(Error::RateUndefined);
    }
    let mut out = ConvergenceRatios {
        mean_ratio: Vec::with_capacity(steps),
        var_ratio: Vec::with_capacity(steps),
        mean_rel_err: Vec::with_capacity(steps),
        var_rel_err: Vec::with_capacity(steps),
    };
    for m in 0..steps {
        let dm = (means[m] - mu).abs();
        let dv = (vars[m] - sigma_sq).abs();
        out.mean_ratio.push(dm / d_mean);
        out.var_ratio.push(dv / d_var);
        out.mean_rel_err.push((vars[m] / nf).sqrt() / dm);
        out.var_rel_err.push(vars[m] * (2.0 / (nf - 1.0)).sqrt() / dv);
    }
    Ok(out)
}

/// `ρ̂ = (R̂^(m*))^{1/m*}` where `m*` is the last step of the leading run of
/// steps `m ≥ 1` whose relative statistical error is at most `max_rel_err`;
/// `m* = 1` if there is none.
pub fn convergence_rate(ratios: &[f64], rel_err: &[f64], max_rel_err: f64) -> f64 {
    let mut m_star = 1;
    for m in 1..ratios.len().min(rel_err.len()) {
        if rel_err[m] <= max_rel_err {
            m_star = m;
        } else {
            break;
        }
    }
    match ratios.get(m_star) {
        Some(&r) => r.powf(1.0 / m_star as f64),
        None => f64::NAN,
    }
}

/// `Δ̂(M) = sqrt(mean_j (μ − ẑ_j^(M))²)` with `ẑ_j^(M)` the average of the
/// first `M` values of chain `j`.
pub fn rmse_curve(chains: &[Vec<f64>], mu: f64, lengths: &[usize]) -> Result<Vec<f64>> {
    if chains.is_empty() {
        return Err(Error::InvalidParameter("no chains".into()));
    }
    lengths
        .iter()
        .map(|&m| {
            if m == 0 || chains.iter().any(|c| c.len() < m) {
                return Err(Error::InvalidParameter(format!(
                    "RMSE length {m} exceeds chain length"
                )));
            }
            let sq: f64 = chains
                .iter()
                .map(|c| (mu - mean(&c[..m])).powi(2))
                .sum();
            Ok((sq / chains.len() as f64).sqrt())
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Running first and second moments of vector samples, accumulated as
/// deviations from a fixed reference point for numerical stability.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    reference: Vec<f64>,
    count: usize,
    sum: Vec<f64>,
    /// Upper triangle of Σ d dᵀ, row-major.
    outer: Vec<f64>,
    dev: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(reference: Vec<f64>) -> Self {
        let n = reference.len();
        Self {
            reference,
            count: 0,
            sum: vec![0.0; n],
            outer: vec![0.0; n * (n + 1) / 2],
            dev: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.reference.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) {
        let n = self.dim();
        for i in 0..n {
            self.dev[i] = x[i] - self.reference[i];
            self.sum[i] += self.dev[i];
        }
        let mut k = 0;
        for i in 0..n {
            let di = self.dev[i];
            for j in i..n {
                self.outer[k] += di * self.dev[j];
                k += 1;
            }
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.count += other.count;
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.outer.iter_mut().zip(&other.outer).for_each(|(a, b)| *a += b);
    }

    pub fn mean(&self) -> Vec<f64> {
        let c = self.count as f64;
        self.reference.iter().zip(&self.sum).map(|(r, s)| r + s / c).collect()
    }

    /// Sample covariance (`N − 1` denominator) as a dense row-major matrix.
    pub fn covariance(&self) -> Vec<f64> {
        let n = self.dim();
        let c = self.count as f64;
        let m: Vec<f64> = self.sum.iter().map(|s| s / c).collect();
        let mut cov = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = (self.outer[k] - c * m[i] * m[j]) / (c - 1.0);
                cov[i * n + j] = v;
                cov[j * n + i] = v;
                k += 1;
            }
        }
        cov
    }
}

/// Largest standardised deviations of sample moments from their expected
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub max_mean_z: f64,
    pub max_cov_z: f64,
    pub checks: usize,
}

impl MomentCheck {
    pub fn passes(&self, n_sigma: f64) -> bool {
        self.max_mean_z <= n_sigma && self.max_cov_z <= n_sigma
    }
}

/// Compare sample moments with the expected mean and covariance
/// (`expected_cov` row-major). Monte Carlo standard errors are
/// `√(Σ_ii/N)` for mean components and `√((Σ_ii Σ_jj + Σ_ij²)/N)` for
/// covariance entries.
pub fn compare_moments(acc: &MomentAccumulator, expected_mean: &[f64], expected_cov: &[f64]) -> MomentCheck {
    let n = acc.dim();
    let nf = acc.count() as f64;
    let mean = acc.mean();
    let cov = acc.covariance();
    let mut max_mean_z: f64 = 0.0;
    let mut max_cov_z: f64 = 0.0;
    for i in 0..n {
        let se = (expected_cov[i * n + i] / nf).sqrt();
        max_mean_z = max_mean_z.max((mean[i] - expected_mean[i]).abs() / se);
        for j in i..n {
            let sij = expected_cov[i * n + j];
            let se = ((expected_cov[i * n + i] * expected_cov[j * n + j] + sij * sij) / nf).sqrt();
            max_cov_z = max_cov_z.max((cov[i * n + j] - sij).abs() / se);
        }
    }
    MomentCheck {
        max_mean_z,
        max_cov_z,
        checks: n + n * (n + 1) / 2,
    }
}
