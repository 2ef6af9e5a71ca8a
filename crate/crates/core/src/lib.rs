//! Bistatic OFDM integrated sensing and communication (ISAC) waveform design.
//!
//! The crate optimizes a single OFDM symbol whose subcarriers are split between
//! pilots (sensing) and data (communication): it maximizes the communication
//! data rate subject to a per-path delay Cramér-Rao bound and a power budget,
//! and validates the result with a Monte Carlo receiver that estimates every
//! path delay by maximum likelihood.
//!
//! Module map:
//! - [`model`]: configuration, paths, channel synthesis, data rate
//! - [`crb`]: Fisher information, delay CRB, effective-bandwidth requirement
//! - [`optimizer`]: block coordinate descent over power, centroid, assignment and duals
//! - [`baselines`]: SAUPA, RSAPA and RSAUPA comparison allocators
//! - [`receiver`]: received-signal synthesis, AoA search, pilot demodulation, ML delay estimation
//! - [`harness`]: scenarios, Monte Carlo sweeps and method comparison

// `!(x > 0.0)` is meant: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod crb;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod receiver;

pub use error::{IsacError, Result};
pub use model::{ChannelResponse, Path, PathSet, SystemConfig, Waveform};
