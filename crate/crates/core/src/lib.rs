//! Diffeomorphic alignment of paired endpoint clouds on the union of two unit spheres.

pub mod align;
pub mod basis;
pub mod density;
pub mod energy;
pub mod error;
pub mod io;
pub mod kernel;
pub mod mesh;
pub mod metrics;
pub mod sim;
pub mod sphere;

pub use error::{Error, Result};
