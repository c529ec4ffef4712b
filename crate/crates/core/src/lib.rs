//! Two-stage image outpainting guided by semantic layouts.
//!
//! Stage one extends a semantic layout into the unknown region of a masked
//! image; stage two synthesizes pixels conditioned on the extended layout
//! through spatially-adaptive normalization. The crate covers data handling,
//! the networks, their objectives, adversarial training, inference and FID
//! evaluation.

pub mod error;
pub mod layout_data;
pub mod networks;
pub mod evaluation;
pub mod objectives;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
