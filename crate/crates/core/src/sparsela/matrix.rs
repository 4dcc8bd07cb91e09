use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower-triangular compressed-column sparsity structure of a symmetric matrix.
///
/// Column `j` lists row indices `i >= j` in increasing order, so the diagonal
/// is always the first entry of its column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    order: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl Pattern {
    /// Builds a pattern from arbitrary coordinates; upper entries are mirrored
    /// into the lower triangle and every diagonal entry is added.
    pub fn from_entries<I>(order: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut cols: Vec<Vec<usize>> = (0..order).map(|j| vec![j]).collect();
        for (r, c) in entries {
            if r >= order || c >= order {
                return Err(Error::DimensionMismatch {
                    expected: order,
                    got: r.max(c) + 1,
                    context: "pattern entry out of range",
                });
            }
            let (i, j) = if r >= c { (r, c) } else { (c, r) };
            cols[j].push(i);
        }
        let mut col_ptr = Vec::with_capacity(order + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut col in cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(&col);
            col_ptr.push(row_idx.len());
        }
        Ok(Pattern {
            order,
            col_ptr,
            row_idx,
        })
    }

    pub fn diagonal(order: usize) -> Self {
        Pattern {
            order,
            col_ptr: (0..=order).collect(),
            row_idx: (0..order).collect(),
        }
    }

    /// Dense lower triangle.
    pub fn full(order: usize) -> Self {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::with_capacity(order * (order + 1) / 2);
        for j in 0..order {
            row_idx.extend(j..order);
            col_ptr.push(row_idx.len());
        }
        Pattern {
            order,
            col_ptr,
            row_idx,
        }
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    #[inline]
    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    #[inline]
    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Row indices of column `j` (diagonal first).
    #[inline]
    pub fn col(&self, j: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Storage position of `(row, col)` in either triangle.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let (i, j) = if row >= col { (row, col) } else { (col, row) };
        if j >= self.order {
            return None;
        }
        let start = self.col_ptr[j];
        self.col(j).binary_search(&i).ok().map(|p| start + p)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.find(row, col).is_some()
    }

    /// Lower-triangle coordinates `(row, col)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.order).flat_map(move |j| self.col(j).iter().map(move |&i| (i, j)))
    }

    pub fn union(&self, other: &Pattern) -> Result<Pattern> {
        if self.order != other.order {
            return Err(Error::DimensionMismatch {
                expected: self.order,
                got: other.order,
                context: "pattern union",
            });
        }
        Pattern::from_entries(self.order, self.iter().chain(other.iter()))
    }

    /// `true` when every entry of `other` is present in `self`.
    pub fn covers(&self, other: &Pattern) -> bool {
        self.order == other.order && other.iter().all(|(i, j)| self.contains(i, j))
    }
}

/// Sparse symmetric matrix storing only its lower triangle.
#[derive(Clone, Debug)]
pub struct SparseSym<T> {
    pattern: Arc<Pattern>,
    values: Vec<T>,
}

impl<T: Real> PartialEq for SparseSym<T> {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern)
            && self.values == other.values
    }
}

impl<T: Real> SparseSym<T> {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let values = vec![T::zero(); pattern.nnz()];
        SparseSym { pattern, values }
    }

    pub fn from_parts(pattern: Arc<Pattern>, values: Vec<T>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch {
                expected: pattern.nnz(),
                got: values.len(),
                context: "values vs pattern",
            });
        }
        Ok(SparseSym { pattern, values })
    }

    /// Assembles from coordinate triplets. Duplicates are summed and entries
    /// given in the upper triangle are folded onto the lower one.
    pub fn from_triplets<I>(order: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let triplets: Vec<(usize, usize, T)> = triplets.into_iter().collect();
        let pattern = Arc::new(Pattern::from_entries(
            order,
            triplets.iter().map(|&(r, c, _)| (r, c)),
        )?);
        let mut m = SparseSym::zeros(pattern);
        for (r, c, v) in triplets {
            let p = m.pattern.find(r, c).expect("entry present by construction");
            m.values[p] += v;
        }
        Ok(m)
    }

    pub fn identity(order: usize) -> Self {
        SparseSym {
            pattern: Arc::new(Pattern::diagonal(order)),
            values: vec![T::one(); order],
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        SparseSym {
            pattern: Arc::new(Pattern::diagonal(diag.len())),
            values: diag.to_vec(),
        }
    }

    /// Lower triangle of a dense symmetric matrix, dropping entries with
    /// magnitude `<= drop_tol` (diagonal always kept).
    pub fn from_dense(a: &DMatrix<T>, drop_tol: T) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
                context: "dense matrix must be square",
            });
        }
        let n = a.nrows();
        let mut trips = Vec::new();
        for j in 0..n {
            for i in j..n {
                let v = a[(i, j)];
                if i == j || v.abs() > drop_tol {
                    trips.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, trips)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.pattern.order
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Stored value at `(row, col)`, or `None` outside the pattern.
    pub fn entry(&self, row: usize, col: usize) -> Option<T> {
        self.pattern.find(row, col).map(|p| self.values[p])
    }

    /// Value at `(row, col)`, zero outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> T {
        self.entry(row, col).unwrap_or_else(T::zero)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.order())
            .map(|j| self.values[self.pattern.col_ptr[j]])
            .collect()
    }

    /// `(row, col, value)` over the stored lower triangle.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.pattern
            .iter()
            .zip(self.values.iter())
            .map(|((i, j), &v)| (i, j, v))
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        let n = self.order();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
                context: "mul_vec",
            });
        }
        let mut y = vec![T::zero(); n];
        for j in 0..n {
            let (s, e) = (self.pattern.col_ptr[j], self.pattern.col_ptr[j + 1]);
            for p in s..e {
                let i = self.pattern.row_idx[p];
                let v = self.values[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        Ok(y)
    }

    /// `x' A y`.
    pub fn quad_form(&self, x: &[T], y: &[T]) -> T {
        let mut acc = T::zero();
        for j in 0..self.order() {
            let (s, e) = (self.pattern.col_ptr[j], self.pattern.col_ptr[j + 1]);
            for p in s..e {
                let i = self.pattern.row_idx[p];
                let v = self.values[p];
                acc += v * x[i] * y[j];
                if i != j {
                    acc += v * x[j] * y[i];
                }
            }
        }
        acc
    }

    pub fn max_abs_diagonal(&self) -> T {
        self.diagonal()
            .into_iter()
            .fold(T::zero(), |m, d| m.max(d.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.order();
        let mut a = DMatrix::from_element(n, n, T::zero());
        for (i, j, v) in self.iter() {
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        a
    }

    /// Symmetric principal submatrix on `indices` (in the given order).
    pub fn principal_submatrix(&self, indices: &[usize]) -> Result<Self> {
        let n = self.order();
        let mut local = vec![usize::MAX; n];
        for (k, &g) in indices.iter().enumerate() {
            if g >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: g + 1,
                    context: "submatrix index",
                });
            }
            local[g] = k;
        }
        let trips = self.iter().filter_map(|(i, j, v)| {
            let (a, b) = (local[i], local[j]);
            (a != usize::MAX && b != usize::MAX).then_some((a, b, v))
        });
        Self::from_triplets(indices.len(), trips)
    }

    /// Writes the `order nnz` header followed by `row col value` lines.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.order(), self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{} {} {}", i, j, v)?;
        }
        Ok(())
    }

    pub fn read_coo<R: BufRead>(r: R, origin: &Path) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "empty file"))??;
        let mut it = header.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(origin, format!("bad header field `{what}`")))
        };
        let order = next_usize("order")?;
        let nnz = next_usize("nnz")?;
        let mut trips = Vec::with_capacity(nnz);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(origin, format!("bad entry on line {}", lineno + 2));
            if f.len() != 3 {
                return Err(bad());
            }
            let i: usize = f[0].parse().map_err(|_| bad())?;
            let j: usize = f[1].parse().map_err(|_| bad())?;
            let v: f64 = f[2].parse().map_err(|_| bad())?;
            if i < j {
                return Err(Error::parse(origin, "entry above the diagonal"));
            }
            trips.push((i, j, T::lit(v)));
        }
        if trips.len() != nnz {
            return Err(Error::parse(
                origin,
                format!("header announces {nnz} entries, found {}", trips.len()),
            ));
        }
        Self::from_triplets(order, trips)
    }
}
