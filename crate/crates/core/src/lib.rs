//! Perceptual realness assessment for AI-generated images.
//!
//! Two halves share this crate:
//!
//! * [`regressor`]: a cross-modal regressor that predicts a subjective
//!   realness score from an image and a text description of what looks
//!   unrealistic in it, trained with MSE against mean opinion scores.
//! * [`dream`]: dense realness maps that localize the inconsistent regions by
//!   matching sliding-window patch embeddings against that description.
//!
//! Around them sit dataset manifests and splits ([`dataset`]), correlation
//! metrics ([`metrics`]), embedding backends ([`embedding`]), a
//! vision-language annotation client ([`annotator`]), SVG scatter plots
//! ([`plot`]) and seeded toy data for smoke runs ([`synthetic`]).

pub mod annotator;
pub mod dataset;
pub mod dream;
pub mod embedding;
pub mod error;
mod fsutil;
pub mod metrics;
pub mod plot;
pub mod regressor;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
pub use fsutil::{load_rgb, save_png, write_atomic};
