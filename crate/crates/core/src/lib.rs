//! Phase-robust self-similarity representations of pulse signals and
//! gradient harmonization for training across conflicting domains.
//!
//! * [`signal`]: filtering, peak picking, synthetic pulses, a periodogram oracle.
//! * [`ssp`]: self-similarity maps, their MSE loss, heart-rate inversion.
//! * [`harmonizer`]: norm-queue sifting and pairwise gradient projection.
//! * [`toy`]: a small end-to-end model, corpus and training loop.
//! * [`io`], [`report`], [`cli`]: file formats, figures and the command surface.

pub mod cli;
pub mod error;
pub mod harmonizer;
pub mod io;
pub mod report;
pub mod rng;
pub mod signal;
pub mod ssp;
pub mod toy;

pub use error::{DohaError, Result};
