//! Markov chain updates targeting `N(Ã⁻¹f, Ã⁻¹)`.

mod baseline;
mod gibbs;
mod mgmc;
mod smoother;

pub use baseline::{CholeskySampler, GibbsSampler, GibbsSchedule};
pub use gibbs::{GibbsWorkspace, LowRankGibbs};
pub use mgmc::{Mgmc, MgmcWorkspace};
pub use smoother::{random_smoother_step, DenseSplittingSampler};

pub use crate::splitting::Direction;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NoiseSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleKind {
    V,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseMode {
    /// `ν₀` symmetric low-rank Gibbs sweeps on level 0.
    Smoother,
    /// Exact draw from a sparse Cholesky factor of `Ã₀`.
    Cholesky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Forward sweeps before the coarse correction, backward sweeps after.
    ForwardBackward,
    /// Every pre- and post-smoothing step is a forward then backward sweep.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleParams {
    pub nu1: usize,
    pub nu2: usize,
    pub cycle: CycleKind,
    pub nu0: usize,
    pub coarse: CoarseMode,
    pub omega: f64,
    pub smoothing: Smoothing,
}

impl Default for CycleParams {
    fn default() -> Self {
        Self {
            nu1: 1,
            nu2: 1,
            cycle: CycleKind::V,
            nu0: 4,
            coarse: CoarseMode::Smoother,
            omega: 1.0,
            smoothing: Smoothing::ForwardBackward,
        }
    }
}

impl CycleParams {
    pub fn v_cycle() -> Self {
        Self::default()
    }

    pub fn w_cycle() -> Self {
        Self {
            cycle: CycleKind::W,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu1 + self.nu2 == 0 {
            return Err(Error::InvalidParameter(
                "at least one pre- or post-smoothing sweep is required".into(),
            ));
        }
        if self.coarse == CoarseMode::Smoother && self.nu0 == 0 {
            return Err(Error::InvalidParameter(
                "coarse smoother needs nu0 >= 1".into(),
            ));
        }
        crate::splitting::check_omega(self.omega)
    }

    /// Number of recursive coarse-grid calls made from `level`.
    pub fn gamma(&self, level: usize, finest: usize) -> usize {
        match self.cycle {
            CycleKind::V => 1,
            CycleKind::W if level < finest => 2,
            CycleKind::W => 1,
        }
    }
}

/// A Markov chain update with reusable scratch space.
pub trait Sampler: Sync {
    type Workspace: Send;

    fn dim(&self) -> usize;

    fn workspace(&self) -> Self::Workspace;

    fn step<N: NoiseSource + ?Sized>(
        &self,
        theta: &mut [f64],
        ws: &mut Self::Workspace,
        noise: &mut N,
    ) -> Result<()>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_schedule() {
        let v = CycleParams::v_cycle();
        let w = CycleParams::w_cycle();
        assert_eq!((0..4).map(|l| v.gamma(l, 3)).collect::<Vec<_>>(), vec![1, 1, 1, 1]);
        assert_eq!((1..4).map(|l| w.gamma(l, 3)).collect::<Vec<_>>(), vec![2, 2, 1]);
    }

    #[test]
    fn params_validation() {
        assert!(CycleParams::default().validate().is_ok());
        let bad = CycleParams {
            nu1: 0,
            nu2: 0,
            ..CycleParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = CycleParams {
            omega: 2.0,
            ..CycleParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
