//! Renormalization of analytic circle maps near rotations.

pub mod beltrami;
pub mod cfrac;
pub mod circlemap;
pub mod cohom;
pub mod config;
pub mod error;
pub mod families;
pub mod probes;
pub mod renorm;

pub use error::{Error, Result};
