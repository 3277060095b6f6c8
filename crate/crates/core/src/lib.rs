//! Object-centric sapling monitoring from SLAM trajectories, GNSS fixes and
//! per-sapling structure-from-motion reconstructions.

pub mod error;
pub mod georef;
pub mod ingest;
pub mod kv;
pub mod leafwood;
pub mod model;
pub mod pipeline;
pub mod registry;
pub mod sfmalign;
pub mod skeleton;
pub mod spatial;
pub mod traits;
pub mod synth;

pub use error::{Error, Result};
pub use model::*;

/// Guide chapters, compiled so that every snippet runs under `cargo test`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/frames.md")]
    mod frames {}
    #[doc = include_str!("../../../book/src/georeferencing.md")]
    mod georeferencing {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/skeletons.md")]
    mod skeletons {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/traits.md")]
    mod traits {}
    #[doc = include_str!("../../../book/src/registry.md")]
    mod registry {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
