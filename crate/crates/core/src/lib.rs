//! Smart-meter occupancy privacy testbed.
//!
//! The crate models three parties around a household smart meter:
//!
//! * an honest-but-curious utility that trains an occupancy detector on raw
//!   consumption ([`attack`]),
//! * a meter-side defender that injects billing-neutral, gradient-crafted
//!   noise chosen against a local LSTM surrogate ([`defense`]),
//! * a setup phase in which meters publish pseudonymous, Lamport-signed
//!   readings to a proof-of-work ledger so the utility can train a population
//!   model without learning which meter produced which data ([`ledger`]).
//!
//! [`sim`] wires the parties together into a seeded, fully deterministic
//! experiment. [`timeseries`] and [`neural`] hold the shared substrate.

pub mod attack;
#[doc(hidden)]
pub mod bytes;
pub mod defense;
pub mod error;
pub mod ledger;
pub mod neural;
pub mod seed;
pub mod sim;
pub mod timeseries;

pub use error::{Error, Result};
