//! Differentiable MRI physics for estimating CSF/GM/WM probability maps.
//!
//! The forward chain turns tissue probability maps into quantitative maps
//! ([`phantom::mix`]), drives every voxel through an Extended Phase Graph
//! ([`epg`]) along a pulse [`sequence`], encodes the echoes into Cartesian
//! k-space and reconstructs magnitude images ([`simulator`]). The [`grad`]
//! module differentiates that chain in reverse mode and [`optimize`] inverts
//! it with projected Adam.

pub mod config;
pub mod epg;
pub mod error;
pub mod grad;
pub mod metrics;
pub mod optimize;
pub mod phantom;
pub mod sequence;
pub mod simulator;

pub use error::{Error, Result};

pub use num_complex::Complex64;
