//! Matter-wave scattering off spherically layered core-shell nanoparticles
//! with position-dependent effective mass, and a two-stage search for
//! parameter sets that are both invisible (negligible cross section) and
//! cloaking (negligible probability flux in the core).

pub mod cli;
pub mod designer;
pub mod error;
pub mod fields;
pub mod model;
pub mod scaled;
pub mod solver;
pub mod specfun;

pub use error::{Error, Result};
