//! Deterministic simulator and analysis library for relay-based quantum key
//! distribution networks.
//!
//! The quantum plane is modelled at two levels:
//!
//! - [`bb84`]: a symbolic two-basis qubit (basis, bit) with the basis-match
//!   measurement rule. This is exact for every prepare-and-measure protocol
//!   in the crate and is what [`network`] uses to step timeslots.
//! - [`statevector`]: a small dense pure-state simulator used for the
//!   GHZ-type intermediary in [`ghz`] and for CHSH estimation.
//!
//! Classical post-processing lives in [`transport`] (partitioning sessions
//! into logical channels and transporting bits across closed links),
//! [`protocols`] (sifting, bit revelation, duplex parity checks) and
//! [`dropout`] (drop-out relays and XOR key shares). [`harness`] ties it all
//! together behind JSON scenario configs and a reproduction suite.
//!
//! Every stochastic operation takes an explicit RNG stream derived from a
//! single seed (see [`rng`]), so runs are bit-reproducible.

#![forbid(unsafe_code)]

pub mod announce;
pub mod bb84;
pub mod dropout;
pub mod error;
pub mod ghz;
pub mod harness;
pub mod network;
pub mod persist;
pub mod protocols;
pub mod rng;
pub mod statevector;
pub mod stats;
pub mod transport;

pub use bb84::{Basis, Bit, Qubit};
pub use error::{Error, Result};
pub use network::{ChannelSpec, Participant, RelayMode, SessionData, SlotRecord};
pub use rng::{SeedSource, SimRng};
