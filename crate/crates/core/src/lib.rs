//! Simulation and analytics library for packet-coordinated distributed
//! energy resources providing fast frequency response.
//!
//! The crate couples a linearized multi-bus grid model with an individually
//! simulated DER population under a fully decentralized participation law,
//! lets the packet coordinator estimate available synthetic damping in real
//! time from its timer histograms, and computes probabilistic lower bounds
//! on that damping from the spectral content of regulation (AGC) signals.

pub mod config;
pub mod control;
pub mod coordinator;
pub mod engine;
pub mod error;
pub mod fleet;
pub mod grid;
pub mod harness;
pub mod spectral;

pub use error::{Error, Result};
