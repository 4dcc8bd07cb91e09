use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparsela::{Pattern, SparseSym, Symbolic};

/// Fixed sparsity structure of `Omega` for a given prior pattern and IC
/// count, with its symbolic factorization.
///
/// Every location carries all `L (L + 1) / 2` IC pairs, so the pattern does
/// not depend on the mixing matrix.
#[derive(Debug)]
pub struct OmegaLayout {
    n_ics: usize,
    n_locations: usize,
    r_pattern: Arc<Pattern>,
    pattern: Arc<Pattern>,
    symbolic: Arc<Symbolic>,
    /// Storage index in `Omega` of each prior entry, per IC.
    r_pos: Vec<Vec<usize>>,
    /// Storage index of `(l, l2)` with `l >= l2` at each location.
    loc_pos: Vec<usize>,
}

#[inline]
fn pair_index(l: usize, l2: usize) -> usize {
    let (a, b) = if l >= l2 { (l, l2) } else { (l2, l) };
    a * (a + 1) / 2 + b
}

impl OmegaLayout {
    pub fn new(r_pattern: Arc<Pattern>, n_ics: usize) -> Result<Self> {
        if n_ics == 0 {
            return Err(Error::InvalidArgument("need at least one IC".into()));
        }
        let v = r_pattern.order();
        let n = v * n_ics;
        let mut entries = Vec::with_capacity(n_ics * r_pattern.nnz() + v * n_ics * n_ics / 2);
        for l in 0..n_ics {
            entries.extend(r_pattern.iter().map(|(i, j)| (l * v + i, l * v + j)));
        }
        for loc in 0..v {
            for l in 0..n_ics {
                for l2 in 0..l {
                    entries.push((l * v + loc, l2 * v + loc));
                }
            }
        }
        let pattern = Arc::new(Pattern::from_entries(n, entries)?);
        let find = |i: usize, j: usize| pattern.find(i.max(j), i.min(j)).expect("entry inserted above");
        let r_pos = (0..n_ics)
            .map(|l| r_pattern.iter().map(|(i, j)| find(l * v + i, l * v + j)).collect())
            .collect();
        let npairs = n_ics * (n_ics + 1) / 2;
        let mut loc_pos = vec![0; v * npairs];
        for loc in 0..v {
            for l in 0..n_ics {
                for l2 in 0..=l {
                    loc_pos[loc * npairs + pair_index(l, l2)] = find(l * v + loc, l2 * v + loc);
                }
            }
        }
        let symbolic = Symbolic::analyze(Arc::clone(&pattern));
        Ok(OmegaLayout {
            n_ics,
            n_locations: v,
            r_pattern,
            pattern,
            symbolic,
            r_pos,
            loc_pos,
        })
    }

    #[inline]
    pub fn n_ics(&self) -> usize {
        self.n_ics
    }

    #[inline]
    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    #[inline]
    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    #[inline]
    pub fn r_pattern(&self) -> &Arc<Pattern> {
        &self.r_pattern
    }

    #[inline]
    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    /// Storage index of prior entry `p` of IC `l`.
    #[inline]
    pub(crate) fn r_pos(&self, l: usize) -> &[usize] {
        &self.r_pos[l]
    }

    /// Storage index of IC pair `(l, l2)` at location `loc`.
    #[inline]
    pub(crate) fn loc_pos(&self, loc: usize, l: usize, l2: usize) -> usize {
        let npairs = self.n_ics * (self.n_ics + 1) / 2;
        self.loc_pos[loc * npairs + pair_index(l, l2)]
    }
}

/// `R^{-1}` for IC `l` from one shared matrix or one per IC.
#[inline]
pub(crate) fn prior_for(r_inv: &[SparseSym<f64>], l: usize) -> &SparseSym<f64> {
    if r_inv.len() == 1 {
        &r_inv[0]
    } else {
        &r_inv[l]
    }
}

/// `Omega = R^{-1} + D P' M' (nu0^2 C)^{-1} M P D` in IC-major order.
///
/// `a = M' C^{-1} M / nu0_sq`; block `(l, l2)` receives
/// `a[l, l2] * D_l * D_l2` on its diagonal.
pub fn build_omega(
    layout: &OmegaLayout,
    r_inv: &[SparseSym<f64>],
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<SparseSym<f64>> {
    let (l_count, v) = (layout.n_ics, layout.n_locations);
    if !(r_inv.len() == 1 || r_inv.len() == l_count) {
        return Err(Error::DimensionMismatch {
            expected: l_count,
            got: r_inv.len(),
            context: "prior precision count",
        });
    }
    if d.shape() != (l_count, v) || a.shape() != (l_count, l_count) {
        return Err(Error::DimensionMismatch {
            expected: l_count,
            got: d.nrows(),
            context: "prior SD or data precision shape",
        });
    }
    if r_inv.iter().any(|r| **r.pattern() != *layout.r_pattern) {
        return Err(Error::PatternMismatch);
    }
    let mut values = vec![0.0; layout.pattern.nnz()];
    for l in 0..l_count {
        let r = prior_for(r_inv, l);
        for (&pos, &x) in layout.r_pos(l).iter().zip(r.values()) {
            values[pos] += x;
        }
    }
    for loc in 0..v {
        for l in 0..l_count {
            let dl = d[(l, loc)];
            for l2 in 0..=l {
                values[layout.loc_pos(loc, l, l2)] += a[(l, l2)] * dl * d[(l2, loc)];
            }
        }
    }
    SparseSym::from_parts(Arc::clone(&layout.pattern), values)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::sparsela::cholesky;

    /// Random SPD matrix on a banded pattern.
    fn banded_spd(v: usize, rng: &mut ChaCha8Rng) -> SparseSym<f64> {
        let mut t = Vec::new();
        for i in 0..v {
            t.push((i, i, 3.0 + rng.random::<f64>()));
            if i + 1 < v {
                t.push((i + 1, i, rng.random::<f64>() - 0.5));
            }
            if i + 2 < v {
                t.push((i + 2, i, 0.5 * (rng.random::<f64>() - 0.5)));
            }
        }
        SparseSym::from_triplets(v, t).unwrap()
    }

    fn with_values(like: &SparseSym<f64>, rng: &mut ChaCha8Rng) -> SparseSym<f64> {
        let vals = like
            .iter()
            .map(|(i, j, _)| if i == j { 3.0 + rng.random::<f64>() } else { rng.random::<f64>() - 0.5 })
            .collect();
        SparseSym::from_parts(Arc::clone(like.pattern()), vals).unwrap()
    }

    #[test]
    fn scalar_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = banded_spd(5, &mut rng);
        let layout = OmegaLayout::new(Arc::clone(r.pattern()), 1).unwrap();
        let omega = build_omega(&layout, &[r.clone()], &DMatrix::from_element(1, 5, 1.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        let expect = r.to_dense() + DMatrix::identity(5, 5);
        assert!((omega.to_dense() - expect).amax() < 1e-15);
    }

    #[test]
    fn matches_dense_kronecker_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (v, l) = (6, 2);
        let r0 = banded_spd(v, &mut rng);
        let r1 = with_values(&r0, &mut rng);
        let m = DMatrix::from_fn(l, l, |_, _| rng.random::<f64>() - 0.5);
        let c = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8]);
        let nu2 = 0.7;
        let d = DMatrix::from_fn(l, v, |_, _| 0.2 + rng.random::<f64>());
        let a = m.transpose() * c.clone().try_inverse().unwrap() * &m / nu2;
        let layout = OmegaLayout::new(Arc::clone(r0.pattern()), l).unwrap();
        let omega = build_omega(&layout, &[r0.clone(), r1.clone()], &d, &a).unwrap().to_dense();

        // P maps IC-major to location-major: (P s)[v L + l] = s[l V + v].
        let n = v * l;
        let mut p = DMatrix::zeros(n, n);
        for loc in 0..v {
            for ic in 0..l {
                p[(loc * l + ic, ic * v + loc)] = 1.0;
            }
        }
        let eye = DMatrix::<f64>::identity(v, v);
        let m_kron = eye.kronecker(&m);
        let c_kron = eye.kronecker(&c);
        let dd = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            (0..l).flat_map(|ic| (0..v).map(move |loc| (ic, loc))).map(|(ic, loc)| d[(ic, loc)]),
        ));
        let mut rinv = DMatrix::zeros(n, n);
        rinv.view_mut((0, 0), (v, v)).copy_from(&r0.to_dense());
        rinv.view_mut((v, v), (v, v)).copy_from(&r1.to_dense());
        let data = &dd * p.transpose() * m_kron.transpose() * (c_kron * nu2).try_inverse().unwrap() * &m_kron * &p * &dd;
        let expect = rinv + data;
        assert!((&omega - &expect).amax() < 1e-12);
    }

    #[test]
    fn zero_sd_removes_data_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = banded_spd(6, &mut rng);
        let layout = OmegaLayout::new(Arc::clone(r.pattern()), 2).unwrap();
        let mut d = DMatrix::from_element(2, 6, 1.0);
        d[(0, 2)] = 0.0;
        d[(1, 4)] = 0.0;
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let omega = build_omega(&layout, &[r.clone()], &d, &a).unwrap();
        let rd = r.to_dense();
        let od = omega.to_dense();
        // Row of IC 0 at location 2 equals the prior row.
        for j in 0..6 {
            assert_eq!(od[(2, j)], rd[(2, j)]);
        }
        assert_eq!(od[(2, 6 + 2)], 0.0);
        assert_eq!(od[(6 + 4, 6 + 4)], rd[(4, 4)]);
        assert!(cholesky(&omega).is_ok());
    }

    #[test]
    fn pattern_is_independent_of_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = banded_spd(7, &mut rng);
        let layout = OmegaLayout::new(Arc::clone(r.pattern()), 3).unwrap();
        let d = DMatrix::from_element(3, 7, 1.0);
        let o1 = build_omega(&layout, &[r.clone()], &d, &DMatrix::identity(3, 3)).unwrap();
        let o2 = build_omega(&layout, &[r.clone()], &d, &DMatrix::from_element(3, 3, 0.2)).unwrap();
        assert!(Arc::ptr_eq(o1.pattern(), o2.pattern()));
        assert!(layout.symbolic().factor(&o2).is_ok());
    }
}
