use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform lattice on the unit square or cube with homogeneous Dirichlet
/// boundary. Only interior vertices carry unknowns; they are numbered
/// lexicographically with x varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells: usize,
}

impl Grid {
    pub fn new(dim: usize, cells: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!(
                "grid dimension must be 2 or 3, got {dim}"
            )));
        }
        if cells < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 cells per side, got {cells}"
            )));
        }
        Ok(Self { dim, cells })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per side.
    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Interior vertices per side.
    #[inline]
    pub fn side(&self) -> usize {
        self.cells - 1
    }

    /// Number of unknowns.
    #[inline]
    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the interior vertex with lattice coordinates `c` (each in
    /// `1..cells`), or `None` for boundary vertices.
    #[inline]
    pub fn index(&self, c: [usize; 3]) -> Option<usize> {
        let m = self.side();
        let mut idx = 0;
        let mut stride = 1;
        for &ck in &c[..self.dim] {
            if ck == 0 || ck >= self.cells {
                return None;
            }
            idx += (ck - 1) * stride;
            stride *= m;
        }
        Some(idx)
    }

    /// Lattice coordinates of interior vertex `idx`; unused trailing entries are 0.
    #[inline]
    pub fn coords(&self, mut idx: usize) -> [usize; 3] {
        let m = self.side();
        let mut c = [0; 3];
        for ck in c.iter_mut().take(self.dim) {
            *ck = idx % m + 1;
            idx /= m;
        }
        c
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let h = self.h();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = c[k] as f64 * h;
        }
        x
    }

    /// The grid with half as many cells per side.
    pub fn coarsen(&self) -> Result<Self> {
        if self.cells % 2 != 0 || self.cells / 2 < 2 {
            return Err(Error::InvalidRefinement {
                cells: self.cells,
                levels: 1,
            });
        }
        Ok(Self {
            dim: self.dim,
            cells: self.cells / 2,
        })
    }

    pub fn refine(&self) -> Self {
        Self {
            dim: self.dim,
            cells: self.cells * 2,
        }
    }

    /// Number of coarsenings taken when the depth is chosen automatically:
    /// halve while the cell count is even and the result has at least two
    /// cells, so the coarsest grid has 2 or an odd number of cells.
    pub fn auto_levels(&self) -> usize {
        let mut n = self.cells;
        let mut levels = 0;
        while n % 2 == 0 && n / 2 >= 2 {
            n /= 2;
            levels += 1;
        }
        levels
    }

    /// Interior vertex indices whose position lies within distance `r` of `center`.
    pub fn vertices_in_ball(&self, center: &[f64], r: f64) -> Vec<usize> {
        let h = self.h();
        let eps = 1e-12;
        let mut lo = [1usize; 3];
        let mut hi = [1usize; 3];
        for k in 0..self.dim {
            let a = ((center[k] - r) / h - eps).ceil().max(1.0);
            let b = ((center[k] + r) / h + eps).floor().min(self.side() as f64);
            if b < a {
                return Vec::new();
            }
            lo[k] = a as usize;
            hi[k] = b as usize;
        }
        let mut out = Vec::new();
        let z_range = if self.dim == 3 { lo[2]..=hi[2] } else { 0..=0 };
        for kz in z_range {
            for ky in lo[1]..=hi[1] {
                for kx in lo[0]..=hi[0] {
                    let c = [kx, ky, kz];
                    let d2: f64 = (0..self.dim)
                        .map(|k| (c[k] as f64 * h - center[k]).powi(2))
                        .sum();
                    if d2 <= r * r + eps {
                        out.push(self.index(c).expect("interior by construction"));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
