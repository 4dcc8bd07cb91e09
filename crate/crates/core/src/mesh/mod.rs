//! Triangular meshes, linear finite elements and the SPDE precision.

mod fem;
mod grid;
mod spde;
mod trimesh;

pub use fem::{assemble_fem, FemMatrices};
pub use grid::{grid_mesh, BoundaryRing, BoundarySpec};
pub use spde::{data_precision, spde_precision, DataPrecisionBuilder, Schur, SpdeOperator, C1};
pub use trimesh::TriMesh;
