//! Sparse Cholesky factorisation `A = 𝔓ᵀ UᵀU 𝔓` with optional fill-reducing
//! ordering, and exact Gaussian sampling from the factor.
//!
//! The numeric phase is supernodal multifrontal: columns with nested
//! patterns are grouped, each group is factored as a dense front and its
//! Schur complement is added into the parent front.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::sparse::{SparseMatrix, Triangle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    Natural,
    #[default]
    FillReducing,
}

/// A triangular factor `R = T 𝔓`, where `T` is stored explicitly and `𝔓` is
/// an optional symmetric permutation with `(𝔓x)[k] = x[perm[k]]`.
#[derive(Debug, Clone)]
pub struct TriangularFactor {
    orientation: Triangle,
    matrix: SparseMatrix,
    perm: Option<Vec<usize>>,
}

impl TriangularFactor {
    pub fn new(orientation: Triangle, matrix: SparseMatrix, perm: Option<Vec<usize>>) -> Result<Self> {
        check_len("TriangularFactor (square)", matrix.nrows(), matrix.ncols())?;
        if let Some(p) = &perm {
            check_len("TriangularFactor permutation", matrix.nrows(), p.len())?;
            let mut seen = vec![false; p.len()];
            for &i in p {
                if i >= p.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidParameter("not a permutation".into()));
                }
            }
        }
        Ok(Self {
            orientation,
            matrix,
            perm,
        })
    }

    pub fn orientation(&self) -> Triangle {
        self.orientation
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.perm.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    fn permute(&self, x: &[f64]) -> Vec<f64> {
        match &self.perm {
            Some(p) => p.iter().map(|&i| x[i]).collect(),
            None => x.to_vec(),
        }
    }

    fn unpermute(&self, y: Vec<f64>) -> Vec<f64> {
        match &self.perm {
            Some(p) => {
                let mut x = vec![0.0; y.len()];
                for (k, &i) in p.iter().enumerate() {
                    x[i] = y[k];
                }
                x
            }
            None => y,
        }
    }

    /// `R x`.
    pub fn mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("TriangularFactor::mul", self.dim(), x.len())?;
        let px = self.permute(x);
        let mut y = vec![0.0; self.dim()];
        self.matrix.mul_vec_into(&px, &mut y);
        Ok(y)
    }

    /// `R⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("TriangularFactor::solve", self.dim(), b.len())?;
        let mut y = b.to_vec();
        solve_rows(&self.matrix, self.orientation, &mut y)?;
        Ok(self.unpermute(y))
    }

    /// `R⁻ᵀ b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("TriangularFactor::solve_transpose", self.dim(), b.len())?;
        let mut y = self.permute(b);
        solve_columns(&self.matrix, self.orientation, &mut y)?;
        Ok(y)
    }

    /// `(RᵀR)⁻¹ b`, i.e. a solve with the factored matrix.
    pub fn solve_normal(&self, b: &[f64]) -> Result<Vec<f64>> {
        let g = self.solve_transpose(b)?;
        self.solve(&g)
    }

    /// Exact draw from `N((RᵀR)⁻¹f, (RᵀR)⁻¹)` given a standard normal vector
    /// `z`: solves `Rᵀg = f` then `Rθ = z + g`.
    pub fn sample(&self, f: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_len("TriangularFactor::sample", self.dim(), z.len())?;
        let mut g = self.solve_transpose(f)?;
        g.iter_mut().zip(z).for_each(|(gi, zi)| *gi += zi);
        self.solve(&g)
    }

    /// Reassemble `RᵀR` in the original ordering.
    pub fn reconstruct(&self) -> Result<SparseMatrix> {
        let rtr = self.matrix.transpose().matmul(&self.matrix)?;
        Ok(match &self.perm {
            Some(p) => SparseMatrix::from_triplets(
                rtr.nrows(),
                rtr.ncols(),
                rtr.triplets().map(|(i, j, v)| (p[i], p[j], v)),
            )?,
            None => rtr,
        })
    }
}

/// Row-oriented substitution with the stored triangle.
fn solve_rows(t: &SparseMatrix, tri: Triangle, x: &mut [f64]) -> Result<()> {
    let n = t.nrows();
    let step = |i: usize, x: &mut [f64]| -> Result<()> {
        let (cols, vals) = t.row(i);
        let mut s = x[i];
        let mut d = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i {
                d = v;
            } else {
                s -= v * x[j];
            }
        }
        if d == 0.0 {
            return Err(Error::SingularSplitting { row: i });
        }
        x[i] = s / d;
        Ok(())
    };
    match tri {
        Triangle::Lower => (0..n).try_for_each(|i| step(i, x)),
        Triangle::Upper => (0..n).rev().try_for_each(|i| step(i, x)),
    }
}

/// Substitution with the transpose of the stored triangle, walking stored
/// rows as columns.
fn solve_columns(t: &SparseMatrix, tri: Triangle, x: &mut [f64]) -> Result<()> {
    let n = t.nrows();
    let step = |i: usize, x: &mut [f64]| -> Result<()> {
        let (cols, vals) = t.row(i);
        let d = match cols.binary_search(&i) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        };
        if d == 0.0 {
            return Err(Error::SingularSplitting { row: i });
        }
        x[i] /= d;
        let xi = x[i];
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i {
                x[j] -= v * xi;
            }
        }
        Ok(())
    };
    match tri {
        // Tᵀ is lower when T is upper
        Triangle::Upper => (0..n).try_for_each(|i| step(i, x)),
        Triangle::Lower => (0..n).rev().try_for_each(|i| step(i, x)),
    }
}

fn fill_reducing_permutation(a: &SparseMatrix) -> Result<Vec<usize>> {
    let n = a.nrows();
    let (p, _pinv, _info) = amd::order(n, a.indptr(), a.indices(), &amd::Control::default())
        .map_err(|s| Error::InvalidParameter(format!("AMD ordering failed: {s:?}")))?;
    Ok(p)
}

/// Elimination tree of the permuted matrix `C = 𝔓A𝔓ᵀ`.
fn etree(a: &SparseMatrix, p: &[usize], pinv: &[usize]) -> Vec<usize> {
    let n = a.nrows();
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for &j in a.row(p[k]).0 {
            let mut i = pinv[j];
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `Uᵀ` (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn ereach(
    a: &SparseMatrix,
    k: usize,
    p: &[usize],
    pinv: &[usize],
    parent: &[usize],
    mark: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = a.nrows();
    let mut top = n;
    mark[k] = k;
    for &j in a.row(p[k]).0 {
        let mut i = pinv[j];
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Postorder of a forest given by `parent` (roots have `usize::MAX`).
fn postorder(parent: &[usize]) -> Vec<usize> {
    let n = parent.len();
    let mut head = vec![usize::MAX; n];
    let mut next = vec![usize::MAX; n];
    // reverse insertion keeps children in increasing order
    for j in (0..n).rev() {
        if parent[j] != usize::MAX {
            next[j] = head[parent[j]];
            head[parent[j]] = j;
        }
    }
    let mut post = Vec::with_capacity(n);
    let mut stack = Vec::new();
    for root in (0..n).filter(|&j| parent[j] == usize::MAX) {
        stack.push(root);
        while let Some(&top) = stack.last() {
            let child = head[top];
            if child == usize::MAX {
                stack.pop();
                post.push(top);
            } else {
                head[top] = next[child];
                stack.push(child);
            }
        }
    }
    post
}

/// Column counts of `L = Uᵀ` (diagonal included) from the row reaches.
fn column_counts(a: &SparseMatrix, p: &[usize], pinv: &[usize], parent: &[usize]) -> Vec<usize> {
    let n = a.nrows();
    let mut mark = vec![usize::MAX; n];
    let mut stack = vec![0usize; n];
    let mut counts = vec![1usize; n];
    for k in 0..n {
        let top = ereach(a, k, p, pinv, parent, &mut mark, &mut stack);
        for &i in &stack[top..] {
            counts[i] += 1;
        }
    }
    counts
}

/// Supernodes: maximal runs of columns `j−1, j` with `parent[j−1] = j` and
/// nested patterns. Each supernode keeps the sorted row pattern of its first
/// column.
struct Supernodes {
    start: Vec<usize>,
    rows: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

fn supernodes(
    a: &SparseMatrix,
    p: &[usize],
    pinv: &[usize],
    parent: &[usize],
    counts: &[usize],
) -> Supernodes {
    let n = a.nrows();
    let mut start = vec![0];
    let mut owner = vec![0usize; n];
    for j in 1..n {
        if !(parent[j - 1] == j && counts[j - 1] == counts[j] + 1) {
            start.push(j);
        }
        owner[j] = start.len() - 1;
    }
    start.push(n);
    let ns = start.len() - 1;

    let mut children = vec![Vec::new(); ns];
    for s in 0..ns {
        let last = start[s + 1] - 1;
        if parent[last] != usize::MAX {
            children[owner[parent[last]]].push(s);
        }
    }

    let mut mark = vec![usize::MAX; n];
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(ns);
    for s in 0..ns {
        let (f, l) = (start[s], start[s + 1] - 1);
        let mut r: Vec<usize> = (f..=l).collect();
        for &i in &r {
            mark[i] = s;
        }
        let ncols = r.len();
        for j in f..=l {
            for &q in a.row(p[j]).0 {
                let i = pinv[q];
                if i > l && mark[i] != s {
                    mark[i] = s;
                    r.push(i);
                }
            }
        }
        for &t in &children[s] {
            let kt = start[t + 1] - start[t];
            for &i in &rows[t][kt..] {
                if mark[i] != s {
                    mark[i] = s;
                    r.push(i);
                }
            }
        }
        r[ncols..].sort_unstable();
        debug_assert_eq!(r.len(), counts[f]);
        rows.push(r);
    }
    Supernodes {
        start,
        rows,
        children,
    }
}

/// Factor the leading `k` columns of the dense symmetric front `f` (lower
/// triangle used) and leave the Schur complement in the trailing block.
/// On failure returns the local pivot and its value.
fn partial_cholesky(f: &mut DMatrix<f64>, k: usize) -> std::result::Result<(), (usize, f64)> {
    const BLOCK: usize = 48;
    const STRIP: usize = 192;
    let m = f.nrows();
    let mut b = 0;
    while b < k {
        let e = (b + BLOCK).min(k);
        {
            let data = f.as_mut_slice();
            for j in b..e {
                let d = data[j * m + j];
                if !(d > 0.0) || !d.is_finite() {
                    return Err((j, d));
                }
                let s = d.sqrt();
                let (left, right) = data.split_at_mut((j + 1) * m);
                let col_j = &mut left[j * m..];
                col_j[j] = s;
                let inv = 1.0 / s;
                col_j[j + 1..].iter_mut().for_each(|v| *v *= inv);
                for c in j + 1..e {
                    let ljc = col_j[c];
                    if ljc == 0.0 {
                        continue;
                    }
                    let off = (c - j - 1) * m;
                    let col_c = &mut right[off + c..off + m];
                    for (x, &y) in col_c.iter_mut().zip(&col_j[c..]) {
                        *x -= ljc * y;
                    }
                }
            }
        }
        if e < m {
            // lower triangle of the trailing block, one column strip at a time
            let r = m - e;
            let panel = f.view((e, b), (r, e - b)).transpose();
            let mut c = 0;
            while c < r {
                let w = STRIP.min(r - c);
                let mut strip = f.view_mut((e + c, e + c), (r - c, w));
                strip.gemm_tr(-1.0, &panel.columns(c, r - c), &panel.columns(c, w), 1.0);
                c += w;
            }
        }
        b = e;
    }
    Ok(())
}

/// Sparse Cholesky factorisation of a symmetric positive definite matrix.
///
/// Returns `R = U𝔓` with `U` upper triangular so that `A = RᵀR`. With the
/// fill-reducing ordering the AMD permutation is followed by a postorder of
/// the elimination tree, which leaves the fill unchanged and makes
/// supernodes contiguous.
pub fn sparse_cholesky(a: &SparseMatrix, ordering: Ordering) -> Result<TriangularFactor> {
    check_len("sparse_cholesky (square)", a.nrows(), a.ncols())?;
    let asym = a.max_asymmetry();
    if asym > 0.0 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.nrows();
    let inverse = |p: &[usize]| {
        let mut pinv = vec![0; p.len()];
        for (k, &i) in p.iter().enumerate() {
            pinv[i] = k;
        }
        pinv
    };
    let mut p: Vec<usize> = match ordering {
        Ordering::Natural => (0..n).collect(),
        Ordering::FillReducing => fill_reducing_permutation(a)?,
    };
    let mut pinv = inverse(&p);
    let mut parent = etree(a, &p, &pinv);
    if ordering == Ordering::FillReducing {
        p = postorder(&parent).into_iter().map(|k| p[k]).collect();
        pinv = inverse(&p);
        parent = etree(a, &p, &pinv);
    }
    let counts = column_counts(a, &p, &pinv, &parent);
    let sn = supernodes(a, &p, &pinv, &parent, &counts);

    let mut indptr = vec![0usize; n + 1];
    for i in 0..n {
        indptr[i + 1] = indptr[i] + counts[i];
    }
    let nnz = indptr[n];
    let mut indices = vec![0usize; nnz];
    let mut values = vec![0.0f64; nnz];

    let ns = sn.rows.len();
    let mut updates: Vec<Option<DMatrix<f64>>> = vec![None; ns];
    let mut relpos = vec![0usize; n];
    for s in 0..ns {
        let (f0, f1) = (sn.start[s], sn.start[s + 1]);
        let k = f1 - f0;
        let rows = &sn.rows[s];
        let m = rows.len();
        for (i, &r) in rows.iter().enumerate() {
            relpos[r] = i;
        }
        let mut front = DMatrix::<f64>::zeros(m, m);
        for j in f0..f1 {
            let cj = j - f0;
            let (cols, vals) = a.row(p[j]);
            for (&q, &v) in cols.iter().zip(vals) {
                let i = pinv[q];
                if i >= j {
                    front[(relpos[i], cj)] += v;
                }
            }
        }
        for &t in &sn.children[s] {
            let u = updates[t].take().expect("child update computed before parent");
            let kt = sn.start[t + 1] - sn.start[t];
            let urows = &sn.rows[t][kt..];
            for (bcol, &rb) in urows.iter().enumerate() {
                let cb = relpos[rb];
                for (arow, &ra) in urows.iter().enumerate().skip(bcol) {
                    front[(relpos[ra], cb)] += u[(arow, bcol)];
                }
            }
        }
        partial_cholesky(&mut front, k).map_err(|(j, value)| Error::NotPositiveDefinite {
            pivot: f0 + j,
            value,
        })?;
        for c in 0..k {
            let j = f0 + c;
            let dst = indptr[j]..indptr[j + 1];
            indices[dst.clone()].copy_from_slice(&rows[c..]);
            values[dst].copy_from_slice(&front.as_slice()[c * m + c..(c + 1) * m]);
        }
        if k < m {
            updates[s] = Some(front.view((k, k), (m - k, m - k)).clone_owned());
        }
    }

    let u = SparseMatrix::from_csr(n, n, indptr, indices, values)?;
    let perm = match ordering {
        Ordering::Natural => None,
        Ordering::FillReducing => Some(p),
    };
    TriangularFactor::new(Triangle::Upper, u, perm)
}
