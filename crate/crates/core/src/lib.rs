//! Topology identification for networks of linear dynamical systems.
//!
//! Observed series are compared through coherence-based distances and causal
//! Wiener filtering; minimum spanning trees and polytrees over those distances
//! recover the interconnection structure of acyclic linear networks.

pub mod aln;
pub mod cli;
pub mod error;
mod fft;
pub mod metric;
pub mod signal;
pub mod sparse;
#[cfg(test)]
mod testutil;
pub mod topology;
pub mod wiener;

pub use error::{Error, Result};
