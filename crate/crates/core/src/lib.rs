//! Drone-to-satellite geo-localization toolkit.
//!
//! The crate covers everything around the CNN backbone: statistical style
//! alignment of raw images ([`style`]), circular crop and heading alignment
//! ([`spatial`]), feature maps from a small deterministic extractor or from
//! FMAP files ([`features`]), global and part pooling ([`partition`]), and
//! Recall@K / mAP evaluation ([`retrieval`]). [`dataset`] ingests
//! University-1652-style trees and renders synthetic multi-view scenes;
//! [`pipeline`] chains the stages and runs the preprocessing ablation.
//!
//! # Feature flags
//! - `parallel` (default): batch stages run on the rayon thread pool. Without
//!   it, [`Execution::Parallel`] silently runs sequentially.

pub mod dataset;
pub mod error;
pub mod features;
pub mod par;
pub mod partition;
pub mod pipeline;
pub mod raster;
pub mod retrieval;
pub mod rng;
pub mod spatial;
pub mod style;
pub mod view;

pub use error::{Error, Result};
pub use par::Execution;
pub use raster::{clip_channel, luminance, FeatureMap, ImageBuffer, RealImage, Rgb, Vector};
pub use view::View;
