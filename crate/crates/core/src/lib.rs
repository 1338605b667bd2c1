//! Trefftz-type discretizations of the 2D Helmholtz equation on polygonal meshes.

pub mod analysis;
pub mod basis;
pub mod forms;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod specialfn;

pub use geometry::Point2;
pub use num_complex::Complex64;
