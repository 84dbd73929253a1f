//! Phase-field fracture of anisotropic brittle solids on 2D Q1 meshes, with a
//! single-scale staggered solver and an adaptive Global-Local solver that couples a
//! linear global model to a refined nonlinear local patch through Robin interface
//! conditions and mortar projections.

pub mod adaptivity;
pub mod assembly;
pub mod coupling;
pub mod error;
pub mod gl;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod postprocess;
pub mod scenario;
pub mod single_scale;
pub mod vtk;

pub use error::{Error, Result};
