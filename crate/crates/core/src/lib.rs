//! LPC-based voice conversion.
//!
//! The pipeline analyses speech into per-frame all-pole models, maps the
//! source speaker's coefficients into the target's space with a small
//! 24-50-24 network trained by Levenberg-Marquardt, resynthesizes through the
//! converted filters, transfers the pitch contour with TD-PSOLA, and scores
//! the result with cepstral distortion.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lpc;
pub mod manifest;
pub mod mapping;
pub mod pipeline;
pub mod plot;
pub mod poly;
pub mod prosody;
pub mod report;
pub mod signal;

pub use error::{Error, ErrorClass, Result};
