//! Discrete-event simulator for single-gateway LoRaWAN networks running the
//! v1.1 adaptive data rate mechanism.
//!
//! The crate splits along the protocol stack:
//!
//! - [`phy`]: propagation, airtime, sensitivity, collision/capture;
//! - [`mac`]: Class A receive windows, duty cycle, retransmissions;
//! - [`adr`]: the device counter machine and the network-side SF/TP
//!   computation over the last N received packets;
//! - [`sim`]: the deterministic event loop tying devices, gateway, and
//!   network server together, with link-change and node-arrival injection;
//! - [`metrics`]: convergence time, radio energy, loss breakdown, and
//!   aggregates over repetitions;
//! - [`cli`]: scenario files, experiment presets, repetition orchestration,
//!   and CSV output.

pub mod adr;
pub mod cli;
pub mod error;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod sim;

pub use error::Error;
