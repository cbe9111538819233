//! The guide in `book/`, compiled so its examples run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}

#[doc = include_str!("../../../book/src/lpc.md")]
pub mod lpc {}

#[doc = include_str!("../../../book/src/stability.md")]
pub mod stability {}

#[doc = include_str!("../../../book/src/prosody.md")]
pub mod prosody {}

#[doc = include_str!("../../../book/src/mapping.md")]
pub mod mapping {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/workflow.md")]
pub mod workflow {}
