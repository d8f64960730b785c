//! Qualitative correspondence analysis for spatial data, applied to
//! spectral portraits and perturbed eigenvalue clouds.

pub mod geometry;
pub mod jordan;
pub mod numkernel;
pub mod portrait;
pub mod sal;
