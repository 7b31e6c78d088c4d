pub mod aspp;
pub mod atrous;
pub mod densecrf;
pub mod error;
pub mod eval;
pub mod format;
pub mod hdfilter;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{FeatureMap, LabelMap, PixelCoord, RgbImage, IGNORE_LABEL};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/atrous.md")]
    mod atrous {}
    #[doc = include_str!("../../../book/src/aspp.md")]
    mod aspp {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/densecrf.md")]
    mod densecrf {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synth.md")]
    mod synth {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
