use std::sync::Arc;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparsela::{Pattern, SparseSym};

/// Relative area below which a triangle counts as degenerate.
const DEGENERATE_REL_AREA: f64 = 1e-12;

/// Lumped mass `F` (diagonal) and stiffness `G` of linear elements.
#[derive(Clone, Debug)]
pub struct FemMatrices<T> {
    f: Vec<T>,
    g: SparseSym<T>,
}

impl<T: Real> FemMatrices<T> {
    /// Builds from a mass diagonal and a stiffness matrix of the same order.
    pub fn from_parts(f_diag: Vec<T>, g: SparseSym<T>) -> Result<Self> {
        if f_diag.len() != g.order() {
            return Err(Error::DimensionMismatch {
                expected: g.order(),
                got: f_diag.len(),
                context: "mass diagonal length",
            });
        }
        if let Some(i) = f_diag.iter().position(|v| !(*v > T::zero())) {
            return Err(Error::InvalidArgument(format!(
                "mass matrix entry {i} is not positive"
            )));
        }
        Ok(FemMatrices { f: f_diag, g })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.f.len()
    }

    /// Diagonal of `F`.
    #[inline]
    pub fn f_diag(&self) -> &[T] {
        &self.f
    }

    pub fn f(&self) -> SparseSym<T> {
        SparseSym::from_diagonal(&self.f)
    }

    #[inline]
    pub fn g(&self) -> &SparseSym<T> {
        &self.g
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Assembles the lumped mass and stiffness matrices of a mesh.
///
/// Element stiffness is `K_ij = (e_i . e_j) / (4 A)` with `e_i` the edge
/// opposite vertex `i`; each vertex receives `A / 3` of mass.
pub fn assemble_fem<T: Real>(mesh: &TriMesh) -> Result<FemMatrices<T>> {
    let n = mesh.n_vertices();
    let verts = mesh.vertices();
    let mut f = vec![0.0f64; n];
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.faces().len() * 6);
    for (fi, tri) in mesh.faces().iter().enumerate() {
        let p = tri.map(|i| verts[i]);
        let e = [sub(p[2], p[1]), sub(p[0], p[2]), sub(p[1], p[0])];
        let c = cross(e[2], sub(p[2], p[0]));
        let area = 0.5 * dot(c, c).sqrt();
        let scale = e.iter().map(|v| dot(*v, *v)).fold(0.0, f64::max);
        if !(area > DEGENERATE_REL_AREA * scale) {
            return Err(Error::DegenerateTriangle { face: fi, area });
        }
        for k in 0..3 {
            f[tri[k]] += area / 3.0;
            for l in 0..=k {
                let v = dot(e[k], e[l]) / (4.0 * area);
                trip.push((tri[k], tri[l], v));
            }
        }
    }
    let g = SparseSym::from_triplets(
        n,
        trip.into_iter().map(|(i, j, v)| (i, j, T::lit(v))),
    )?;
    FemMatrices::from_parts(f.into_iter().map(T::lit).collect(), g)
}

/// `G F^{-1} G` assembled on its own (two-ring) pattern.
pub(crate) fn g_finv_g<T: Real>(fem: &FemMatrices<T>) -> Result<SparseSym<T>> {
    let n = fem.order();
    let mut nbr: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for (i, j, v) in fem.g.iter() {
        nbr[j].push((i, v));
        if i != j {
            nbr[i].push((j, v));
        }
    }
    let mut entries = Vec::new();
    for k in 0..n {
        for &(i, _) in &nbr[k] {
            for &(j, _) in &nbr[k] {
                if i >= j {
                    entries.push((i, j));
                }
            }
        }
    }
    let pattern = Arc::new(Pattern::from_entries(n, entries)?.union(fem.g.pattern())?);
    let mut h = SparseSym::zeros(Arc::clone(&pattern));
    let vals = h.values_mut();
    for k in 0..n {
        let fk = fem.f[k];
        for &(i, a) in &nbr[k] {
            for &(j, b) in &nbr[k] {
                if i >= j {
                    let p = pattern.find(i, j).expect("entry in two-ring pattern");
                    vals[p] += a * b / fk;
                }
            }
        }
    }
    Ok(h)
}
