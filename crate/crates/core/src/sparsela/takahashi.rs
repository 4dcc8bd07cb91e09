//! Selected inversion of a sparse SPD matrix from its Cholesky factor.
//!
//! With `P A P' = L L'` and `Z = (P A P')^{-1}`, the Takahashi recursion runs
//! from the last column backward:
//!
//! ```text
//! Z_ij = -(1/L_jj) * sum_{k in S_j} L_kj Z_ik          (i in S_j)
//! Z_jj = 1/L_jj^2 - (1/L_jj) * sum_{k in S_j} L_kj Z_kj
//! ```
//!
//! where `S_j` is the strict row structure of column `j` of `L`. Every `Z_ik`
//! needed lies inside the structure of `L + L'`, so the recursion closes on it.
//!
//! The implementation runs it a supernode at a time. With `Y = L21 L11^{-1}`
//! and `Z22` restricted to the rows below the diagonal block,
//! `Z21 = -Z22 Y` and `Z11 = L11^{-T} L11^{-1} - Y' Z21`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::chol::{CholFactor, Symbolic};
use super::matrix::{Pattern, SparseSym};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Entries of `A^{-1}` on the structure of the Cholesky factor.
#[derive(Clone, Debug)]
pub struct SelectedInverse<T> {
    symbolic: Arc<Symbolic>,
    z: Vec<T>,
}

impl<T: Real> SelectedInverse<T> {
    /// Runs the recursion for `factor`.
    pub fn new(factor: &CholFactor<T>) -> Self {
        let s = factor.symbolic();
        let n = s.order();
        let cp = s.l_col_ptr();
        let ri = s.l_row_idx();
        let l = factor.l_values();
        let mut z = vec![T::zero(); l.len()];
        // rel[r] = position of row r among the rows below the current
        // supernode's diagonal block, or MAX.
        let mut rel = vec![usize::MAX; n];
        let (mut blk, mut y, mut zrr, mut z21, mut linv, mut z11) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());

        for sn in (0..s.supernode_count()).rev() {
            let (j0, j1, rows) = s.supernode(sn);
            let (w, m) = (j1 - j0, rows.len());
            let below = &rows[w..];
            let mr = below.len();
            s.load_block(l, j0, w, m, &mut blk);

            // Y = L21 L11^{-1}
            y.clear();
            for t in 0..w {
                y.extend_from_slice(&blk[t * m + w..(t + 1) * m]);
            }
            for t in (0..w).rev() {
                let (head, tail) = y.split_at_mut((t + 1) * mr);
                let col_t = &mut head[t * mr..];
                for c in t + 1..w {
                    let f = blk[t * m + c];
                    if f != T::zero() {
                        for (a, &x) in col_t.iter_mut().zip(&tail[(c - t - 1) * mr..(c - t) * mr]) {
                            *a -= f * x;
                        }
                    }
                }
                let d = blk[t * m + t];
                for a in col_t.iter_mut() {
                    *a /= d;
                }
            }

            // Z over the rows below, gathered from later columns.
            for (i, &r) in below.iter().enumerate() {
                rel[r] = i;
            }
            zrr.clear();
            zrr.resize(mr * mr, T::zero());
            for (b, &col) in below.iter().enumerate() {
                let mut need = mr - b;
                for p in cp[col]..cp[col + 1] {
                    let a = rel[ri[p]];
                    if a != usize::MAX {
                        zrr[b * mr + a] = z[p];
                        zrr[a * mr + b] = z[p];
                        need -= 1;
                        if need == 0 {
                            break;
                        }
                    }
                }
            }
            for &r in below {
                rel[r] = usize::MAX;
            }

            // Z21 = -Zrr Y
            z21.clear();
            z21.resize(mr * w, T::zero());
            T::gemm(mr, mr, w, -T::one(), &zrr, (1, mr), &y, (1, mr), &mut z21, (1, mr));

            // Z11 = L11^{-T} L11^{-1} - Y' Z21
            linv.clear();
            linv.resize(w * w, T::zero());
            for c in 0..w {
                linv[c * w + c] = T::one() / blk[c * m + c];
                for i in c + 1..w {
                    let mut acc = T::zero();
                    for k in c..i {
                        acc += blk[k * m + i] * linv[c * w + k];
                    }
                    linv[c * w + i] = -acc / blk[i * m + i];
                }
            }
            z11.clear();
            z11.resize(w * w, T::zero());
            T::gemm(w, w, w, T::one(), &linv, (w, 1), &linv, (1, w), &mut z11, (1, w));
            T::gemm(w, mr, w, -T::one(), &y, (mr, 1), &z21, (1, mr), &mut z11, (1, w));

            for t in 0..w {
                let base = cp[j0 + t];
                for i in t..w {
                    z[base + i - t] = z11[t * w + i];
                }
                z[base + w - t..base + m - t].copy_from_slice(&z21[t * mr..(t + 1) * mr]);
            }
        }
        SelectedInverse {
            symbolic: Arc::clone(s),
            z,
        }
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.symbolic.order()
    }

    /// `(A^{-1})_{ij}` in original indices, if it lies on the factor structure.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let ip = self.symbolic.inverse_permutation();
        self.symbolic
            .find_permuted(ip[i], ip[j])
            .map(|p| self.z[p])
    }

    /// Diagonal of `A^{-1}` in original indices.
    pub fn diagonal(&self) -> Vec<T> {
        let ip = self.symbolic.inverse_permutation();
        let cp = self.symbolic.l_col_ptr();
        (0..self.order()).map(|i| self.z[cp[ip[i]]]).collect()
    }
}

/// Entries of `A^{-1}` on `pattern`, which must contain the pattern of `A`.
///
/// Entries on the factor structure come from the Takahashi recursion; any
/// remaining requested entries are obtained by solving for the needed unit
/// columns.
pub fn partial_inverse<T: Real>(factor: &CholFactor<T>, pattern: &Pattern) -> Result<SparseSym<T>> {
    let n = factor.order();
    if pattern.order() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: pattern.order(),
            context: "partial_inverse pattern order",
        });
    }
    let a_pattern = factor.symbolic().pattern();
    if let Some((row, col)) = a_pattern.iter().find(|&(i, j)| !pattern.contains(i, j)) {
        return Err(Error::PatternNotCovering { row, col });
    }
    let sel = SelectedInverse::new(factor);
    let mut values = vec![T::zero(); pattern.nnz()];
    let mut missing: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (p, (i, j)) in pattern.iter().enumerate() {
        match sel.get(i, j) {
            Some(v) => values[p] = v,
            None => missing.entry(j).or_default().push((i, p)),
        }
    }
    let mut e = vec![T::zero(); n];
    for (j, rows) in missing {
        e[j] = T::one();
        let x = factor.solve(&e)?;
        e[j] = T::zero();
        for (i, p) in rows {
            values[p] = x[i];
        }
    }
    SparseSym::from_parts(Arc::new(pattern.clone()), values)
}
