//! Transformer text classifiers with sentiment tags, adversarial and
//! virtual adversarial training, integrated-gradients attribution and
//! attention heatmaps.
//!
//! The crate is built on a small reverse-mode autodiff engine
//! ([`tensor`]). [`model`] holds the encoder and classifier, [`adversarial`]
//! the perturbation objectives, [`train`] the optimizer loop and metrics,
//! [`interpret`] attribution and attention extraction, [`report`] the HTML
//! and SVG renderers, and [`pipeline`] plus [`cli`] the two-stage workflow.
//!
//! ```
//! use tagvat::train::Metrics;
//!
//! let m = Metrics::from_counts(8, 2, 9, 1).unwrap();
//! assert_eq!(m.summary(), "P=0.8 R=0.8889 Acc=0.85 F1=0.8421");
//! ```

pub mod adversarial;
pub mod cli;
pub mod data;
pub mod error;
pub mod interpret;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod tensor;
pub mod text;
pub mod train;

#[cfg(test)]
mod testutil;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
mod book_autodiff {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tokens.md")]
mod book_tokens {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/adversarial.md")]
mod book_adversarial {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/interpret.md")]
mod book_interpret {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/reports.md")]
mod book_reports {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
mod book_pipeline {}

pub use error::{Error, Result};
