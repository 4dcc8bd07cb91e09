use std::sync::Arc;

use crate::error::Result;
use crate::mesh::{assemble_fem, DataPrecisionBuilder, FemMatrices, TriMesh};
use crate::sparsela::{CholFactor, Pattern, SparseSym, Symbolic};

/// SPDE spatial prior restricted to the data locations, `R^{-1}(kappa)`.
#[derive(Debug)]
pub struct SpatialPrior {
    builder: DataPrecisionBuilder<f64>,
}

impl SpatialPrior {
    pub fn from_fem(fem: &FemMatrices<f64>, data_indices: &[usize]) -> Result<Self> {
        Ok(SpatialPrior {
            builder: DataPrecisionBuilder::new(fem, data_indices)?,
        })
    }

    /// Prior on a mesh whose first `n_data` vertices are the data locations.
    pub fn from_mesh(mesh: &TriMesh, n_data: usize) -> Result<Self> {
        let fem = assemble_fem::<f64>(mesh)?;
        let idx: Vec<usize> = (0..n_data).collect();
        Self::from_fem(&fem, &idx)
    }

    #[inline]
    pub fn n_locations(&self) -> usize {
        self.builder.n_data()
    }

    #[inline]
    pub fn r_pattern(&self) -> &Arc<Pattern> {
        self.builder.r_pattern()
    }

    #[inline]
    pub fn r_symbolic(&self) -> &Arc<Symbolic> {
        self.builder.r_symbolic()
    }

    /// `R^{-1}(kappa)`.
    pub fn precision(&self, kappa: f64) -> Result<SparseSym<f64>> {
        self.builder.data_precision(kappa)
    }

    /// Cholesky factor of a matrix on [`Self::r_pattern`].
    pub fn factor(&self, a: &SparseSym<f64>) -> Result<CholFactor<f64>> {
        self.builder.r_symbolic().factor(a)
    }
}
