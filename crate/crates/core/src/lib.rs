//! Learned deformation subspaces for triangle meshes.
//!
//! A source mesh is rigged with sparse control points and biharmonic
//! coordinates. Fitting the controls to many target point clouds yields a
//! dataset of offsets, which is factorized into a small set of meta-handles
//! with coefficient ranges. Sampling those coefficients produces plausible
//! variations of the source.

pub mod deform;
pub mod discover;
pub mod error;
pub mod fit;
pub mod handles;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod planted;
pub mod shapes;
pub mod spatial;

pub use deform::{
    apply_control_offsets, apply_subspace, clamp_coefficients, sample_coefficients, Coefficients,
    DeformationSubspace, Domain, MetaHandle,
};
pub use error::{Error, Result};
pub use handles::{
    compute_biharmonic_coordinates, geodesic_fps, interpolate_coordinates, ControlPointSet,
    DeformCoordinates,
};
pub use mesh::{load_mesh, read_mesh, sample_surface, write_obj, PointCloud, TriMesh, Vec3};
