//! Grounding natural-language commands to UI elements, with layout-aware
//! encoders and diagnostic probes.

pub mod corpus;
pub mod datagen;
pub mod encoder;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod probing;
pub mod report;
pub mod pipeline;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub mod geometry {}
    #[doc = include_str!("../../../book/src/datagen.md")]
    pub mod datagen {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    pub mod encoder {}
    #[doc = include_str!("../../../book/src/probing.md")]
    pub mod probing {}
    #[doc = include_str!("../../../book/src/reporting.md")]
    pub mod reporting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
