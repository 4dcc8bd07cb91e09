use std::f64::consts::PI;
use std::sync::Arc;

use super::fem::{g_finv_g, FemMatrices};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparsela::{Pattern, SparseSym, Symbolic};

/// Scaling constant of the precision, chosen so the field has unit variance.
pub const C1: f64 = 1.0 / (4.0 * PI);

/// `Q(kappa) = c1 (kappa^2 F + 2 G + kappa^-2 G F^-1 G)` on a pattern that
/// does not depend on `kappa`.
#[derive(Clone, Debug)]
pub struct SpdeOperator<T> {
    pattern: Arc<Pattern>,
    f: Vec<T>,
    g: Vec<T>,
    h: Vec<T>,
}

impl<T: Real> SpdeOperator<T> {
    pub fn new(fem: &FemMatrices<T>) -> Result<Self> {
        let h = g_finv_g(fem)?;
        let pattern = Arc::clone(h.pattern());
        let mut f = vec![T::zero(); pattern.nnz()];
        for (i, &v) in fem.f_diag().iter().enumerate() {
            f[pattern.find(i, i).expect("diagonal present")] = v;
        }
        let mut g = vec![T::zero(); pattern.nnz()];
        for (i, j, v) in fem.g().iter() {
            g[pattern.find(i, j).expect("one-ring inside two-ring")] = v;
        }
        Ok(SpdeOperator {
            pattern,
            f,
            g,
            h: h.values().to_vec(),
        })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.pattern.order()
    }

    #[inline]
    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn precision(&self, kappa: f64) -> Result<SparseSym<T>> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::NonPositiveKappa(kappa));
        }
        let c1 = T::lit(C1);
        let k2 = T::lit(kappa * kappa);
        let km2 = T::lit(1.0 / (kappa * kappa));
        let two = T::lit(2.0);
        let values = (0..self.f.len())
            .map(|p| c1 * (k2 * self.f[p] + two * self.g[p] + km2 * self.h[p]))
            .collect();
        SparseSym::from_parts(Arc::clone(&self.pattern), values)
    }
}

/// Builds `Q(kappa)` directly from FEM matrices.
pub fn spde_precision<T: Real>(fem: &FemMatrices<T>, kappa: f64) -> Result<SparseSym<T>> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::NonPositiveKappa(kappa));
    }
    SpdeOperator::new(fem)?.precision(kappa)
}

/// Precomputed index routing for the Schur complement
/// `Q11 - Q12 Q22^{-1} Q21` onto the data vertices.
///
/// Only data vertices with a nonzero coupling to the non-data block receive
/// a correction, so the result is `Q11` plus one dense block over those.
#[derive(Debug)]
pub struct Schur {
    q_pattern: Arc<Pattern>,
    n_data: usize,
    /// `(Q storage position, R storage position)` for the data-data block.
    q11: Vec<(usize, usize)>,
    /// `(Q storage position, Q22 storage position)`.
    q22: Vec<(usize, usize)>,
    /// For each coupled data vertex, its `(non-data index, Q position)` list.
    coupled: Vec<Vec<(usize, usize)>>,
    /// R storage positions of the dense correction block, lower triangle,
    /// `block[a * (a + 1) / 2 + b]` for `b <= a`.
    block: Vec<usize>,
    q22_symbolic: Option<Arc<Symbolic>>,
    r_pattern: Arc<Pattern>,
    r_symbolic: Arc<Symbolic>,
}

impl Schur {
    pub fn new(q_pattern: Arc<Pattern>, data_indices: &[usize]) -> Result<Self> {
        let n = q_pattern.order();
        const NONE: usize = usize::MAX;
        let mut data_pos = vec![NONE; n];
        for (a, &d) in data_indices.iter().enumerate() {
            if d >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: d + 1,
                    context: "data index beyond precision order",
                });
            }
            if data_pos[d] != NONE {
                return Err(Error::InvalidArgument(format!("data index {d} repeated")));
            }
            data_pos[d] = a;
        }
        let v = data_indices.len();
        let mut other_pos = vec![NONE; n];
        let mut n_other = 0;
        for i in 0..n {
            if data_pos[i] == NONE {
                other_pos[i] = n_other;
                n_other += 1;
            }
        }

        let mut q11_entries = Vec::new();
        let mut q22_entries = Vec::new();
        let mut coupling: Vec<Vec<(usize, usize)>> = vec![Vec::new(); v];
        for (p, (i, j)) in q_pattern.iter().enumerate() {
            match (data_pos[i], data_pos[j]) {
                (a, b) if a != NONE && b != NONE => q11_entries.push((p, a, b)),
                (NONE, NONE) => q22_entries.push((p, other_pos[i], other_pos[j])),
                (a, NONE) => coupling[a].push((other_pos[j], p)),
                (NONE, b) => coupling[b].push((other_pos[i], p)),
                _ => unreachable!(),
            }
        }
        let coupled_idx: Vec<usize> = (0..v).filter(|&a| !coupling[a].is_empty()).collect();

        let mut r_entries: Vec<(usize, usize)> = q11_entries.iter().map(|&(_, a, b)| (a, b)).collect();
        for (x, &a) in coupled_idx.iter().enumerate() {
            for &b in &coupled_idx[..=x] {
                r_entries.push((a, b));
            }
        }
        let r_pattern = Arc::new(Pattern::from_entries(v, r_entries)?);
        let q11 = q11_entries
            .iter()
            .map(|&(p, a, b)| (p, r_pattern.find(a, b).expect("in R pattern")))
            .collect();
        let mut block = Vec::with_capacity(coupled_idx.len() * (coupled_idx.len() + 1) / 2);
        for (x, &a) in coupled_idx.iter().enumerate() {
            for &b in &coupled_idx[..=x] {
                block.push(r_pattern.find(a, b).expect("in R pattern"));
            }
        }

        let (q22, q22_symbolic) = if n_other > 0 {
            let pat = Arc::new(Pattern::from_entries(
                n_other,
                q22_entries.iter().map(|&(_, i, j)| (i, j)),
            )?);
            let routes = q22_entries
                .iter()
                .map(|&(p, i, j)| (p, pat.find(i, j).expect("in Q22 pattern")))
                .collect();
            (routes, Some(Symbolic::analyze(pat)))
        } else {
            (Vec::new(), None)
        };
        let coupled = coupled_idx.iter().map(|&a| std::mem::take(&mut coupling[a])).collect();
        let r_symbolic = Symbolic::analyze(Arc::clone(&r_pattern));
        Ok(Schur {
            q_pattern,
            n_data: v,
            q11,
            q22,
            coupled,
            block,
            q22_symbolic,
            r_pattern,
            r_symbolic,
        })
    }

    #[inline]
    pub fn n_data(&self) -> usize {
        self.n_data
    }

    /// Fixed pattern of the data precision.
    #[inline]
    pub fn r_pattern(&self) -> &Arc<Pattern> {
        &self.r_pattern
    }

    /// Symbolic analysis of [`Self::r_pattern`], shared by all factorizations.
    #[inline]
    pub fn r_symbolic(&self) -> &Arc<Symbolic> {
        &self.r_symbolic
    }

    /// Number of data vertices coupled to the non-data block.
    #[inline]
    pub fn n_coupled(&self) -> usize {
        self.coupled.len()
    }

    pub fn apply<T: Real>(&self, q: &SparseSym<T>) -> Result<SparseSym<T>> {
        if !Arc::ptr_eq(q.pattern(), &self.q_pattern) && **q.pattern() != *self.q_pattern {
            return Err(Error::PatternMismatch);
        }
        let qv = q.values();
        let mut r = vec![T::zero(); self.r_pattern.nnz()];
        for &(p, dst) in &self.q11 {
            r[dst] += qv[p];
        }
        if let Some(sym) = &self.q22_symbolic {
            let mut q22 = SparseSym::zeros(Arc::clone(sym.pattern()));
            {
                let vals = q22.values_mut();
                for &(p, dst) in &self.q22 {
                    vals[dst] = qv[p];
                }
            }
            let factor = sym.factor(&q22)?;
            let m = sym.order();
            let mut rhs = vec![T::zero(); m];
            let mut k = 0;
            for (x, col) in self.coupled.iter().enumerate() {
                for &(o, p) in col {
                    rhs[o] = qv[p];
                }
                let sol = factor.solve(&rhs)?;
                for &(o, _) in col {
                    rhs[o] = T::zero();
                }
                for other in &self.coupled[..=x] {
                    let s = other.iter().fold(T::zero(), |acc, &(o, p)| acc + qv[p] * sol[o]);
                    r[self.block[k]] -= s;
                    k += 1;
                }
            }
        }
        SparseSym::from_parts(Arc::clone(&self.r_pattern), r)
    }
}

/// `R^{-1} = Q11 - Q12 Q22^{-1} Q21` with rows ordered as `data_indices`.
pub fn data_precision<T: Real>(q: &SparseSym<T>, data_indices: &[usize]) -> Result<SparseSym<T>> {
    Schur::new(Arc::clone(q.pattern()), data_indices)?.apply(q)
}

/// SPDE prior on a mesh with everything that does not depend on `kappa`
/// computed once.
#[derive(Debug)]
pub struct DataPrecisionBuilder<T> {
    operator: SpdeOperator<T>,
    schur: Schur,
}

impl<T: Real> DataPrecisionBuilder<T> {
    pub fn new(fem: &FemMatrices<T>, data_indices: &[usize]) -> Result<Self> {
        let operator = SpdeOperator::new(fem)?;
        let schur = Schur::new(Arc::clone(operator.pattern()), data_indices)?;
        Ok(DataPrecisionBuilder { operator, schur })
    }

    #[inline]
    pub fn operator(&self) -> &SpdeOperator<T> {
        &self.operator
    }

    #[inline]
    pub fn schur(&self) -> &Schur {
        &self.schur
    }

    #[inline]
    pub fn n_data(&self) -> usize {
        self.schur.n_data()
    }

    #[inline]
    pub fn r_pattern(&self) -> &Arc<Pattern> {
        self.schur.r_pattern()
    }

    #[inline]
    pub fn r_symbolic(&self) -> &Arc<Symbolic> {
        self.schur.r_symbolic()
    }

    /// `R^{-1}(kappa)` on [`Self::r_pattern`].
    pub fn data_precision(&self, kappa: f64) -> Result<SparseSym<T>> {
        self.schur.apply(&self.operator.precision(kappa)?)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::mesh::{assemble_fem, grid_mesh, BoundarySpec, TriMesh};
    use crate::sparsela::{cholesky, SelectedInverse};

    fn small_mesh() -> TriMesh {
        grid_mesh(4, 5, &BoundarySpec::doubling(1)).unwrap()
    }

    #[test]
    fn identity_mass_without_stiffness_gives_scaled_identity() {
        let g = SparseSym::zeros(Arc::new(Pattern::diagonal(4)));
        let fem = FemMatrices::from_parts(vec![1.0; 4], g).unwrap();
        let q = spde_precision(&fem, 1.0).unwrap();
        assert_eq!(q.to_dense(), DMatrix::identity(4, 4) * C1);
    }

    #[test]
    fn rejects_non_positive_kappa() {
        let fem = assemble_fem::<f64>(&small_mesh()).unwrap();
        for k in [0.0, -1.0, f64::NAN] {
            assert!(matches!(spde_precision(&fem, k), Err(Error::NonPositiveKappa(_))));
        }
    }

    #[test]
    fn precision_matches_dense_construction() {
        let fem = assemble_fem::<f64>(&small_mesh()).unwrap();
        let kappa = 2.0;
        let q = spde_precision(&fem, kappa).unwrap().to_dense();
        let f = fem.f().to_dense();
        let g = fem.g().to_dense();
        let finv = f.clone().try_inverse().unwrap();
        let oracle = (&f * (kappa * kappa) + &g * 2.0 + &g * finv * &g / (kappa * kappa)) * C1;
        assert!((q - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn precision_is_positive_definite_with_fixed_pattern() {
        let fem = assemble_fem::<f64>(&small_mesh()).unwrap();
        let op = SpdeOperator::new(&fem).unwrap();
        for k in [0.01, 0.5, 1.0, 5.0, 100.0] {
            let q = op.precision(k).unwrap();
            assert!(Arc::ptr_eq(q.pattern(), op.pattern()));
            cholesky(&q).unwrap();
        }
    }

    #[test]
    fn all_data_vertices_leave_precision_unchanged() {
        let m = small_mesh();
        let fem = assemble_fem::<f64>(&m).unwrap();
        let q = spde_precision(&fem, 0.7).unwrap();
        let all: Vec<usize> = (0..m.n_vertices()).collect();
        let r = data_precision(&q, &all).unwrap();
        assert_eq!(r, q);
    }

    #[test]
    fn schur_complement_matches_dense_marginal_precision() {
        // 10-vertex mesh with 6 data vertices.
        let pts = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [2.0, 1.0],
            [-1.5, -1.5],
            [3.5, -1.5],
            [3.5, 2.5],
            [-1.5, 2.5],
        ];
        let faces = vec![
            [0, 1, 4],
            [0, 4, 3],
            [1, 2, 5],
            [1, 5, 4],
            [6, 7, 1],
            [6, 1, 0],
            [7, 2, 1],
            [7, 8, 5],
            [7, 5, 2],
            [8, 9, 3],
            [8, 3, 4],
            [8, 4, 5],
            [9, 6, 0],
            [9, 0, 3],
        ];
        let data = vec![4, 0, 5, 1, 3, 2];
        let m = TriMesh::planar(pts, faces, data.clone()).unwrap();
        let fem = assemble_fem::<f64>(&m).unwrap();
        let q = spde_precision(&fem, 1.3).unwrap();
        let r = data_precision(&q, &data).unwrap().to_dense();
        let cov = q.to_dense().try_inverse().unwrap();
        let a = DMatrix::from_fn(6, 10, |i, j| if data[i] == j { 1.0 } else { 0.0 });
        let oracle = (&a * cov * a.transpose()).try_inverse().unwrap();
        assert!((r - &oracle).abs().max() < 1e-9 * oracle.abs().max());
    }

    #[test]
    fn builder_reuses_pattern_and_stays_positive_definite() {
        let m = small_mesh();
        let fem = assemble_fem::<f64>(&m).unwrap();
        let b = DataPrecisionBuilder::new(&fem, m.data_indices()).unwrap();
        for k in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let r = b.data_precision(k).unwrap();
            assert!(Arc::ptr_eq(r.pattern(), b.r_pattern()));
            b.r_symbolic().factor(&r).unwrap();
        }
    }

    #[test]
    fn interior_marginal_variance_near_one() {
        let m = grid_mesh(31, 31, &BoundarySpec::default()).unwrap();
        let fem = assemble_fem::<f64>(&m).unwrap();
        let b = DataPrecisionBuilder::new(&fem, m.data_indices()).unwrap();
        let r = b.data_precision(0.3).unwrap();
        let sel = SelectedInverse::new(&b.r_symbolic().factor(&r).unwrap());
        let centre = 15 * 31 + 15;
        let var = sel.diagonal()[centre];
        assert!((var - 1.0).abs() < 0.1, "centre variance {var}");
    }
}
