use std::sync::Arc;

use nalgebra::DMatrix;

use super::matrix::{Pattern, SparseSym};
use super::ordering::minimum_degree;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pivots below this fraction of the largest diagonal entry are rejected.
pub const PIVOT_REL_TOL: f64 = 1e-14;

/// Widest supernode; wider fundamental supernodes are split.
const MAX_SUPERNODE: usize = 128;

/// Symbolic analysis of a sparsity pattern: ordering, factor structure and
/// the scatter map from input entries into the factor.
///
/// Computed once per pattern and shared by every numeric factorization of
/// matrices with that pattern.
#[derive(Debug)]
pub struct Symbolic {
    pattern: Arc<Pattern>,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `iperm[old] = new`.
    iperm: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    /// For each input entry, its position in the factor storage.
    scatter: Vec<usize>,
    /// Row-wise view of the strictly lower factor: for row `j`, the pairs
    /// `(k, position of L(j,k))` with `k < j`.
    row_ptr: Vec<usize>,
    row_entries: Vec<(usize, usize)>,
    /// Supernode `s` covers columns `sn_ptr[s]..sn_ptr[s + 1]`, which share
    /// the row structure below their diagonal block.
    sn_ptr: Vec<usize>,
    sn_of: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(pattern: Arc<Pattern>) -> Arc<Self> {
        let elim = minimum_degree(&pattern);
        let n = pattern.order();
        let mut iperm = vec![0usize; n];
        for (new, &old) in elim.perm.iter().enumerate() {
            iperm[old] = new;
        }
        let find_l = |i: usize, j: usize| -> usize {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            let s = elim.l_col_ptr[c];
            let col = &elim.l_row_idx[s..elim.l_col_ptr[c + 1]];
            s + col
                .binary_search(&r)
                .expect("input entry lies inside the factor structure")
        };
        let scatter = pattern
            .iter()
            .map(|(i, j)| find_l(iperm[i], iperm[j]))
            .collect();

        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            for &i in &elim.l_row_idx[elim.l_col_ptr[j] + 1..elim.l_col_ptr[j + 1]] {
                counts[i + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let mut row_entries = vec![(0, 0); row_ptr[n]];
        for j in 0..n {
            for p in elim.l_col_ptr[j] + 1..elim.l_col_ptr[j + 1] {
                let i = elim.l_row_idx[p];
                row_entries[fill[i]] = (j, p);
                fill[i] += 1;
            }
        }

        let (sn_ptr, sn_of) = supernodes(&elim.l_col_ptr, &elim.l_row_idx);
        Arc::new(Symbolic {
            pattern,
            perm: elim.perm,
            iperm,
            l_col_ptr: elim.l_col_ptr,
            l_row_idx: elim.l_row_idx,
            scatter,
            row_ptr,
            row_entries,
            sn_ptr,
            sn_of,
        })
    }

    #[inline]
    pub(crate) fn supernode_count(&self) -> usize {
        self.sn_ptr.len() - 1
    }

    /// Columns of supernode `s` and the row structure of its first column.
    #[inline]
    pub(crate) fn supernode(&self, s: usize) -> (usize, usize, &[usize]) {
        let (j0, j1) = (self.sn_ptr[s], self.sn_ptr[s + 1]);
        (j0, j1, &self.l_row_idx[self.l_col_ptr[j0]..self.l_col_ptr[j0 + 1]])
    }

    /// Copies the `m x w` trapezoid of supernode columns `j0..j0 + w` into
    /// `blk` (column-major, zero above the diagonal).
    pub(crate) fn load_block<T: Real>(&self, l: &[T], j0: usize, w: usize, m: usize, blk: &mut Vec<T>) {
        blk.clear();
        blk.resize(m * w, T::zero());
        for t in 0..w {
            let src = self.l_col_ptr[j0 + t];
            blk[t * m + t..(t + 1) * m].copy_from_slice(&l[src..src + m - t]);
        }
    }

    fn store_block<T: Real>(&self, l: &mut [T], j0: usize, w: usize, m: usize, blk: &[T]) {
        for t in 0..w {
            let dst = self.l_col_ptr[j0 + t];
            l[dst..dst + m - t].copy_from_slice(&blk[t * m + t..(t + 1) * m]);
        }
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.pattern.order()
    }

    #[inline]
    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    /// `perm[new] = old`.
    #[inline]
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    #[inline]
    pub fn inverse_permutation(&self) -> &[usize] {
        &self.iperm
    }

    /// Number of stored entries of `L`, diagonal included.
    #[inline]
    pub fn factor_nnz(&self) -> usize {
        self.l_row_idx.len()
    }

    #[inline]
    pub(crate) fn l_col_ptr(&self) -> &[usize] {
        &self.l_col_ptr
    }

    #[inline]
    pub(crate) fn l_row_idx(&self) -> &[usize] {
        &self.l_row_idx
    }

    /// Position of `(i, j)` (permuted indices, either triangle) in `L`.
    #[inline]
    pub(crate) fn find_permuted(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let s = self.l_col_ptr[c];
        self.l_row_idx[s..self.l_col_ptr[c + 1]]
            .binary_search(&r)
            .ok()
            .map(|p| s + p)
    }

    /// Numeric factorization of a matrix carrying the analysed pattern.
    pub fn factor<T: Real>(self: &Arc<Self>, a: &SparseSym<T>) -> Result<CholFactor<T>> {
        if !Arc::ptr_eq(a.pattern(), &self.pattern) && **a.pattern() != *self.pattern {
            return Err(Error::PatternMismatch);
        }
        let n = self.order();
        let mut l = vec![T::zero(); self.l_row_idx.len()];
        for (&dst, &v) in self.scatter.iter().zip(a.values()) {
            l[dst] = v;
        }
        let max_diag = a.max_abs_diagonal();
        let tol = T::lit(PIVOT_REL_TOL) * max_diag;
        let ns = self.supernode_count();
        let mut rel = vec![usize::MAX; n];
        let mut mark = vec![usize::MAX; ns];
        let mut desc = Vec::new();
        let (mut blk, mut abuf, mut cbuf) = (Vec::new(), Vec::new(), Vec::new());

        for s in 0..ns {
            let (j0, j1, rows) = self.supernode(s);
            let (w, m) = (j1 - j0, rows.len());
            for (i, &r) in rows.iter().enumerate() {
                rel[r] = i;
            }
            self.load_block(&l, j0, w, m, &mut blk);

            desc.clear();
            for j in j0..j1 {
                for &(k, _) in &self.row_entries[self.row_ptr[j]..self.row_ptr[j + 1]] {
                    let d = self.sn_of[k];
                    if d != s && mark[d] != s {
                        mark[d] = s;
                        desc.push(d);
                    }
                }
            }
            for &d in &desc {
                let (d0, d1, drows) = self.supernode(d);
                let wd = d1 - d0;
                let r1 = drows.partition_point(|&r| r < j0);
                let nc = drows.partition_point(|&r| r < j1) - r1;
                let mr = drows.len() - r1;
                abuf.clear();
                abuf.resize(mr * wd, T::zero());
                for t in 0..wd {
                    let src = self.l_col_ptr[d0 + t] + r1 - t;
                    abuf[t * mr..(t + 1) * mr].copy_from_slice(&l[src..src + mr]);
                }
                cbuf.clear();
                cbuf.resize(mr * nc, T::zero());
                T::gemm(mr, wd, nc, T::one(), &abuf, (1, mr), &abuf, (mr, 1), &mut cbuf, (1, mr));
                for c in 0..nc {
                    let off = (drows[r1 + c] - j0) * m;
                    for i in c..mr {
                        blk[off + rel[drows[r1 + i]]] -= cbuf[c * mr + i];
                    }
                }
            }

            for t in 0..w {
                let d = blk[t * m + t];
                if !(d > tol) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        column: self.perm[j0 + t],
                        pivot: d.as_f64(),
                    });
                }
                let ljj = d.sqrt();
                blk[t * m + t] = ljj;
                for v in &mut blk[t * m + t + 1..(t + 1) * m] {
                    *v /= ljj;
                }
                let (head, tail) = blk.split_at_mut((t + 1) * m);
                let col_t = &head[t * m..];
                for c in t + 1..w {
                    let f = col_t[c];
                    if f == T::zero() {
                        continue;
                    }
                    let col_c = &mut tail[(c - t - 1) * m..(c - t) * m];
                    for i in c..m {
                        col_c[i] -= col_t[i] * f;
                    }
                }
            }
            self.store_block(&mut l, j0, w, m, &blk);
            for &r in rows {
                rel[r] = usize::MAX;
            }
        }
        Ok(CholFactor {
            symbolic: Arc::clone(self),
            l,
        })
    }
}

/// Fundamental supernodes of the factor structure, split at
/// [`MAX_SUPERNODE`] columns. Column `j + 1` joins the supernode of `j` when
/// it is the parent of `j` and the structure of `j` is `{j} + struct(j + 1)`.
fn supernodes(cp: &[usize], ri: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = cp.len() - 1;
    let mut ptr = vec![0];
    let mut of = vec![0; n];
    for j in 0..n {
        if j > 0 {
            let prev = j - 1;
            let chain = cp[prev + 1] - cp[prev] == cp[j + 1] - cp[j] + 1 && ri.get(cp[prev] + 1) == Some(&j);
            if !chain || j - ptr[ptr.len() - 1] >= MAX_SUPERNODE {
                ptr.push(j);
            }
        }
        of[j] = ptr.len() - 1;
    }
    ptr.push(n);
    (ptr, of)
}

/// Sparse Cholesky factor `P A P' = L L'`.
///
/// Immutable once built; share freely across threads for concurrent solves.
#[derive(Clone, Debug)]
pub struct CholFactor<T> {
    symbolic: Arc<Symbolic>,
    l: Vec<T>,
}

/// Factorizes `a` with a fresh symbolic analysis.
pub fn cholesky<T: Real>(a: &SparseSym<T>) -> Result<CholFactor<T>> {
    Symbolic::analyze(Arc::clone(a.pattern())).factor(a)
}

impl<T: Real> CholFactor<T> {
    #[inline]
    pub fn order(&self) -> usize {
        self.symbolic.order()
    }

    #[inline]
    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    #[inline]
    pub(crate) fn l_values(&self) -> &[T] {
        &self.l
    }

    /// The factor `L` as `(row, col, value)` triplets in permuted indices.
    pub fn l_entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let s = &self.symbolic;
        (0..s.order()).flat_map(move |j| {
            (s.l_col_ptr[j]..s.l_col_ptr[j + 1]).map(move |p| (s.l_row_idx[p], j, self.l[p]))
        })
    }

    /// Dense `L` (permuted index space), for inspection and tests.
    pub fn l_dense(&self) -> DMatrix<T> {
        let n = self.order();
        let mut m = DMatrix::from_element(n, n, T::zero());
        for (i, j, v) in self.l_entries() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn logdet(&self) -> T {
        let two = T::lit(2.0);
        let s = &self.symbolic;
        (0..s.order())
            .map(|j| self.l[s.l_col_ptr[j]].ln())
            .fold(T::zero(), |a, b| a + b)
            * two
    }

    /// Solves `L y = b` in place (permuted space).
    fn forward(&self, y: &mut [T]) {
        let s = &self.symbolic;
        for j in 0..s.order() {
            let (cs, ce) = (s.l_col_ptr[j], s.l_col_ptr[j + 1]);
            let yj = y[j] / self.l[cs];
            y[j] = yj;
            if yj != T::zero() {
                for p in cs + 1..ce {
                    y[s.l_row_idx[p]] -= self.l[p] * yj;
                }
            }
        }
    }

    /// Solves `L' x = y` in place (permuted space).
    fn backward(&self, x: &mut [T]) {
        let s = &self.symbolic;
        for j in (0..s.order()).rev() {
            let (cs, ce) = (s.l_col_ptr[j], s.l_col_ptr[j + 1]);
            let mut acc = x[j];
            for p in cs + 1..ce {
                acc -= self.l[p] * x[s.l_row_idx[p]];
            }
            x[j] = acc / self.l[cs];
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.order() {
            return Err(Error::DimensionMismatch {
                expected: self.order(),
                got: len,
                context: "right-hand side length",
            });
        }
        Ok(())
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        self.check_len(b.len())?;
        let s = &self.symbolic;
        let mut w: Vec<T> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut w);
        self.backward(&mut w);
        let mut x = vec![T::zero(); b.len()];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = w[new];
        }
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_len(b.nrows())?;
        let mut out = DMatrix::from_element(b.nrows(), b.ncols(), T::zero());
        let mut col = vec![T::zero(); b.nrows()];
        for c in 0..b.ncols() {
            for r in 0..b.nrows() {
                col[r] = b[(r, c)];
            }
            let x = self.solve(&col)?;
            for r in 0..b.nrows() {
                out[(r, c)] = x[r];
            }
        }
        Ok(out)
    }

    /// Maps standard-normal `z` to a draw from `N(0, A^{-1})`:
    /// `x = P' L'^{-1} z`.
    pub fn correlate(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        let mut w = z.to_vec();
        self.backward(&mut w);
        let mut x = vec![T::zero(); z.len()];
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            x[old] = w[new];
        }
        Ok(x)
    }

    /// [`correlate`](Self::correlate) applied to every column of `z`.
    pub fn correlate_many(&self, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_len(z.nrows())?;
        let (n, k) = z.shape();
        let s = &self.symbolic;
        // Row-interleaved: w[i * k + c] is row i of column c.
        let mut w = vec![T::zero(); n * k];
        for c in 0..k {
            for i in 0..n {
                w[i * k + c] = z[(i, c)];
            }
        }
        let (mut g, mut l21, mut tmp) = (Vec::new(), Vec::new(), Vec::new());
        for sn in (0..s.supernode_count()).rev() {
            let (j0, j1, rows) = s.supernode(sn);
            let width = j1 - j0;
            let below = &rows[width..];
            let mr = below.len();
            if mr > 0 {
                g.clear();
                for &r in below {
                    g.extend_from_slice(&w[r * k..(r + 1) * k]);
                }
                l21.clear();
                for t in 0..width {
                    let src = s.l_col_ptr[j0 + t] + width - t;
                    l21.extend_from_slice(&self.l[src..src + mr]);
                }
                tmp.clear();
                tmp.resize(k * width, T::zero());
                T::gemm(k, mr, width, T::one(), &g, (1, k), &l21, (1, mr), &mut tmp, (1, k));
                for (dst, &v) in w[j0 * k..j1 * k].iter_mut().zip(&tmp) {
                    *dst -= v;
                }
            }
            for t in (0..width).rev() {
                let cs = s.l_col_ptr[j0 + t];
                let (head, tail) = w.split_at_mut((j0 + t + 1) * k);
                let col_t = &mut head[(j0 + t) * k..];
                for c in t + 1..width {
                    let f = self.l[cs + c - t];
                    for (a, &x) in col_t.iter_mut().zip(&tail[(c - t - 1) * k..(c - t) * k]) {
                        *a -= f * x;
                    }
                }
                let d = self.l[cs];
                for a in col_t.iter_mut() {
                    *a /= d;
                }
            }
        }
        let mut out = DMatrix::from_element(n, k, T::zero());
        for (new, &old) in s.perm.iter().enumerate() {
            for c in 0..k {
                out[(old, c)] = w[new * k + c];
            }
        }
        Ok(out)
    }
}
