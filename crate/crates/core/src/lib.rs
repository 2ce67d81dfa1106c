//! Numerics for a stochastic Schrödinger–Newton model of a self-gravitating
//! wavepacket.
//!
//! Everything here is `no_std` + `alloc` so the core can run on bare targets;
//! file formats, configuration, threads and the command line live in the
//! `stochsn` companion crate.
//!
//! Units are whatever the caller picks for `hbar`, `g` and the mass and
//! length scales in [`params::SimParams`]. The defaults are ħ = G = 1.

#![no_std]
// Index loops mirror the formulas; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ensemble;
pub mod error;
pub mod evolve;
pub mod gaussian;
pub mod grid;
pub mod mastereq;
pub mod noise;
pub mod params;
pub mod phasevar;
pub mod potential;
pub mod quad;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use params::SimParams;
