//! Prior precision matrices on structured grids, multilinear prolongation
//! and Galerkin-coarsened level hierarchies.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `h^d (−Δ_h + κ²)` with the 2d+1 point stencil.
    ShiftedLaplaceFd,
    /// Q1 finite elements for `∫∇u·∇v + κ²∫uv`.
    ShiftedLaplaceFem,
    /// `h² (−Δ_h + κ²)²` with the 13 point stencil, 2D only.
    SquaredShiftedLaplaceFd,
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OperatorKind::ShiftedLaplaceFd => "shifted-laplace-fd",
            OperatorKind::ShiftedLaplaceFem => "shifted-laplace-fem",
            OperatorKind::SquaredShiftedLaplaceFd => "squared-shifted-laplace-fd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub kappa_sq: f64,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, kappa_sq: f64) -> Result<Self> {
        if !(kappa_sq > 0.0) || !kappa_sq.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kappa_sq must be positive, got {kappa_sq}"
            )));
        }
        Ok(Self { kind, kappa_sq })
    }

    /// Spec with `κ² = 1/ℓ²` for correlation length `ℓ`.
    pub fn with_correlation_length(kind: OperatorKind, length: f64) -> Result<Self> {
        Self::new(kind, 1.0 / (length * length))
    }
}

const NEIGHBOURS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn offset(c: [usize; 3], d: [isize; 3]) -> [usize; 3] {
    // lattice coordinates are ≥ 0 with boundary at 0, so wrapping only
    // happens for points that `Grid::index` rejects anyway
    [
        c[0].wrapping_add_signed(d[0]),
        c[1].wrapping_add_signed(d[1]),
        c[2].wrapping_add_signed(d[2]),
    ]
}

/// Assemble the prior precision matrix on the interior vertices of `grid`.
pub fn assemble_prior(grid: &Grid, spec: &OperatorSpec) -> Result<SparseMatrix> {
    match spec.kind {
        OperatorKind::ShiftedLaplaceFd => Ok(assemble_fd(grid, spec.kappa_sq)),
        OperatorKind::ShiftedLaplaceFem => Ok(assemble_fem(grid, spec.kappa_sq)),
        OperatorKind::SquaredShiftedLaplaceFd => {
            if grid.dim() != 2 {
                return Err(Error::UnsupportedOperator {
                    kind: spec.kind.to_string(),
                    dim: grid.dim(),
                });
            }
            Ok(assemble_ssl(grid, spec.kappa_sq))
        }
    }
}

fn assemble_fd(grid: &Grid, kappa_sq: f64) -> SparseMatrix {
    let d = grid.dim();
    let h = grid.h();
    let hd = h.powi(d as i32);
    let diag = hd * (2.0 * d as f64 / (h * h) + kappa_sq);
    let off = -hd / (h * h);
    let mut t = Vec::with_capacity(grid.len() * (2 * d + 1));
    for i in 0..grid.len() {
        let c = grid.coords(i);
        t.push((i, i, diag));
        for nb in &NEIGHBOURS[..2 * d] {
            if let Some(j) = grid.index(offset(c, *nb)) {
                t.push((i, j, off));
            }
        }
    }
    SparseMatrix::from_triplets(grid.len(), grid.len(), t).expect("indices in range")
}

fn assemble_fem(grid: &Grid, kappa_sq: f64) -> SparseMatrix {
    let d = grid.dim();
    let h = grid.h();
    let k1 = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    let m1 = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let nloc = 1usize << d;
    let bit = |a: usize, k: usize| (a >> k) & 1;

    let mut ke = vec![0.0; nloc * nloc];
    for a in 0..nloc {
        for b in 0..nloc {
            let mass: f64 = (0..d).map(|k| m1[bit(a, k)][bit(b, k)]).product();
            let stiff: f64 = (0..d)
                .map(|k| {
                    (0..d)
                        .map(|m| {
                            if m == k {
                                k1[bit(a, m)][bit(b, m)]
                            } else {
                                m1[bit(a, m)][bit(b, m)]
                            }
                        })
                        .product::<f64>()
                })
                .sum();
            ke[a * nloc + b] = stiff + kappa_sq * mass;
        }
    }

    let n = grid.cells();
    let ncell = n.pow(d as u32);
    let mut t = Vec::with_capacity(ncell * nloc * nloc);
    let mut local = vec![None; nloc];
    for e in 0..ncell {
        let mut base = [0usize; 3];
        let mut r = e;
        for b in base.iter_mut().take(d) {
            *b = r % n;
            r /= n;
        }
        for (a, slot) in local.iter_mut().enumerate() {
            let mut c = base;
            for (k, ck) in c.iter_mut().enumerate().take(d) {
                *ck += bit(a, k);
            }
            *slot = grid.index(c);
        }
        for a in 0..nloc {
            let Some(i) = local[a] else { continue };
            for b in 0..nloc {
                if let Some(j) = local[b] {
                    t.push((i, j, ke[a * nloc + b]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(grid.len(), grid.len(), t).expect("indices in range")
}

/// `h² (1/h⁴ S₁₃ + 2κ²/h² S₅ + κ⁴)` where `S₅` is the 5 point Laplacian and
/// `S₁₃` the biharmonic stencil. The ghost value beyond a Dirichlet edge is
/// reflected (`u₋₁ = u₁`), which adds 1 to the centre coefficient for every
/// boundary-adjacent side.
fn assemble_ssl(grid: &Grid, kappa_sq: f64) -> SparseMatrix {
    let h = grid.h();
    let h2 = h * h;
    let s13 = 1.0 / h2;
    let s5 = 2.0 * kappa_sq;
    let s0 = kappa_sq * kappa_sq * h2;
    let mut t = Vec::with_capacity(grid.len() * 13);
    for i in 0..grid.len() {
        let c = grid.coords(i);
        let near_boundary = (0..2)
            .map(|k| (c[k] == 1) as usize + (c[k] == grid.side()) as usize)
            .sum::<usize>();
        t.push((i, i, s13 * (20.0 + near_boundary as f64) + s5 * 4.0 + s0));
        for nb in &NEIGHBOURS[..4] {
            if let Some(j) = grid.index(offset(c, *nb)) {
                t.push((i, j, s13 * -8.0 + s5 * -1.0));
            }
            let far = [2 * nb[0], 2 * nb[1], 0];
            if let Some(j) = grid.index(offset(c, far)) {
                t.push((i, j, s13));
            }
        }
        for diag in [[-1, -1, 0], [1, -1, 0], [-1, 1, 0], [1, 1, 0]] {
            if let Some(j) = grid.index(offset(c, diag)) {
                t.push((i, j, s13 * 2.0));
            }
        }
    }
    SparseMatrix::from_triplets(grid.len(), grid.len(), t).expect("indices in range")
}

/// Multilinear interpolation from `coarse` to `fine` interior vertices.
pub fn build_prolongation(fine: &Grid, coarse: &Grid) -> Result<SparseMatrix> {
    if fine.dim() != coarse.dim() || fine.cells() != 2 * coarse.cells() {
        return Err(Error::GridsNotNested {
            fine: fine.cells(),
            coarse: coarse.cells(),
        });
    }
    let d = fine.dim();
    let mut t = Vec::with_capacity(fine.len() * (1 << d));
    for i in 0..fine.len() {
        let c = fine.coords(i);
        // per axis: one coarse coordinate with weight 1, or two with 1/2
        let mut axes: [Vec<(usize, f64)>; 3] = Default::default();
        for k in 0..3 {
            axes[k] = if k >= d {
                vec![(0, 1.0)]
            } else if c[k] % 2 == 0 {
                vec![(c[k] / 2, 1.0)]
            } else {
                vec![(c[k] / 2, 0.5), (c[k] / 2 + 1, 0.5)]
            };
        }
        for &(cz, wz) in &axes[2] {
            for &(cy, wy) in &axes[1] {
                for &(cx, wx) in &axes[0] {
                    if let Some(j) = coarse.index([cx, cy, cz]) {
                        t.push((i, j, wx * wy * wz));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(fine.len(), coarse.len(), t)
}

/// `Pᵀ A P`. For symmetric `A` the result is mirrored from its upper
/// triangle so that it is exactly symmetric.
pub fn galerkin_coarsen(a_fine: &SparseMatrix, p: &SparseMatrix) -> Result<SparseMatrix> {
    check_len("galerkin_coarsen (A square)", a_fine.nrows(), a_fine.ncols())?;
    check_len("galerkin_coarsen (P rows)", a_fine.ncols(), p.nrows())?;
    let ap = a_fine.matmul(p)?;
    let ptap = p.transpose().matmul(&ap)?;
    if a_fine.is_symmetric() {
        ptap.symmetrize_from_upper()
    } else {
        Ok(ptap)
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    pub grid: Option<Grid>,
    /// Prior precision `A_ℓ`.
    pub a: SparseMatrix,
    /// Observation operator `B_ℓ` (n_ℓ × β, possibly with β = 0).
    pub b: SparseMatrix,
    /// Prolongation from level ℓ−1 to ℓ, absent on level 0.
    pub prolongation: Option<SparseMatrix>,
    /// Transpose of `prolongation`.
    pub restriction: Option<SparseMatrix>,
}

impl Level {
    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Levels `0..=L`, coarsest first.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    levels: Vec<Level>,
}

impl Hierarchy {
    /// Build from an explicit fine-level matrix and a chain of prolongations,
    /// finest first (`prolongations[0]` maps level L−1 to L).
    pub fn from_matrices(
        a_fine: SparseMatrix,
        b_fine: Option<SparseMatrix>,
        prolongations: Vec<SparseMatrix>,
    ) -> Result<Self> {
        Self::build(a_fine, b_fine, prolongations, Vec::new())
    }

    fn build(
        a_fine: SparseMatrix,
        b_fine: Option<SparseMatrix>,
        prolongations: Vec<SparseMatrix>,
        grids: Vec<Grid>,
    ) -> Result<Self> {
        check_len("hierarchy (A square)", a_fine.nrows(), a_fine.ncols())?;
        let asym = a_fine.max_asymmetry();
        if asym > 0.0 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let b_fine = b_fine.unwrap_or_else(|| SparseMatrix::zeros(a_fine.nrows(), 0));
        check_len("hierarchy (B rows)", a_fine.nrows(), b_fine.nrows())?;

        let mut a = a_fine;
        let mut b = b_fine;
        let mut rev = Vec::with_capacity(prolongations.len() + 1);
        for (k, p) in prolongations.into_iter().enumerate() {
            let r = p.transpose();
            let a_coarse = galerkin_coarsen(&a, &p)?;
            let b_coarse = r.matmul(&b)?;
            rev.push(Level {
                grid: grids.get(k).copied(),
                a: std::mem::replace(&mut a, a_coarse),
                b: std::mem::replace(&mut b, b_coarse),
                prolongation: Some(p),
                restriction: Some(r),
            });
        }
        rev.push(Level {
            grid: grids.get(rev.len()).copied(),
            a,
            b,
            prolongation: None,
            restriction: None,
        });
        rev.reverse();
        Ok(Self { levels: rev })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l]
    }

    /// Index of the finest level, `L`.
    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn fine(&self) -> &Level {
        &self.levels[self.finest()]
    }

    pub fn num_observations(&self) -> usize {
        self.levels[0].b.ncols()
    }

    /// Largest relative Frobenius deviation from `A_{ℓ-1} = Pᵀ A_ℓ P` and
    /// `B_{ℓ-1} = Pᵀ B_ℓ`, recomputed from scratch.
    pub fn galerkin_defect(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for l in 1..self.levels.len() {
            let fine = &self.levels[l];
            let coarse = &self.levels[l - 1];
            let p = fine.prolongation.as_ref().expect("level ≥ 1 has P");
            let r = p.transpose();
            let ptap = r.matmul(&fine.a.matmul(p)?)?;
            let scale = ptap.frobenius_norm().max(f64::MIN_POSITIVE);
            worst = worst.max(coarse.a.frobenius_distance(&ptap)? / scale);
            let ptb = r.matmul(&fine.b)?;
            if ptb.nnz() > 0 {
                worst = worst.max(coarse.b.frobenius_distance(&ptb)? / ptb.frobenius_norm());
            }
        }
        Ok(worst)
    }
}

/// Assemble on `grid` and coarsen `levels` times (automatic depth if `None`).
pub fn build_hierarchy(
    grid: &Grid,
    spec: &OperatorSpec,
    b_fine: Option<SparseMatrix>,
    levels: Option<usize>,
) -> Result<Hierarchy> {
    let levels = levels.unwrap_or_else(|| grid.auto_levels());
    let mut grids = vec![*grid];
    for _ in 0..levels {
        let last = grids.last().expect("nonempty");
        let next = last.coarsen().map_err(|_| Error::InvalidRefinement {
            cells: grid.cells(),
            levels,
        })?;
        grids.push(next);
    }
    let a = assemble_prior(grid, spec)?;
    let prolongations = grids
        .windows(2)
        .map(|w| build_prolongation(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    Hierarchy::build(a, b_fine, prolongations, grids)
}
