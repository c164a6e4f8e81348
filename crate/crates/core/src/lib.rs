//! Inverse rendering of procedural materials.
//!
//! A forward model maps continuous and discrete parameters plus a fixed random
//! input to material maps; a collocated-flash renderer turns those into an
//! image; summary functions reduce images to feature vectors. The posterior
//! over parameters given a target image is explored by MAP optimization and
//! a mixed MALA / Metropolis-Hastings sampler. Everything on the continuous
//! path is differentiable through a reverse-mode tape.

pub mod diff;
pub mod error;
pub mod grid;
pub mod materials;
pub mod posterior;
pub mod render;
pub mod sampler;
pub mod summary;
pub mod texsynth;

pub use error::{Error, Result};
pub use grid::{Grid, Shape};
