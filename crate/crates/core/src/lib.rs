//! Simulator for analogue in-memory neural-network inference on memristive
//! crossbar arrays.
//!
//! The pipeline mirrors the hardware: weights are mapped to conductances
//! ([`mapping`]), written into devices with limited precision ([`devices`]),
//! perturbed by fabrication and read-time effects ([`nonidealities`]), and read
//! out through resistive word and bit lines ([`interconnect`]). [`crossbar`]
//! composes these into a programmable vector-matrix multiply used by the
//! network layer ([`nn`]); [`mitigation`] holds the compensation strategies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod crossbar;
pub mod devices;
pub mod error;
pub mod interconnect;
pub mod mapping;
pub mod mitigation;
pub mod nn;
pub mod nonidealities;
pub mod numeric;
pub mod par;

pub use error::{Error, Result};
pub use numeric::{Matrix, RandomStream};
