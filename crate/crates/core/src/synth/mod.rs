//! Synthetic saplings and capture sessions with known ground truth.

mod plot;
mod sapling;

pub use plot::*;
pub use sapling::*;
