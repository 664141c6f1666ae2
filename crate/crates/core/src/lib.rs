//! Phonon-assisted charge cycling of NV-like defects.
//!
//! Two vibronic rate models ([`quasi_continuum`] and [`effective_mode`]),
//! the three-state charge-cycle chain with a blinking-trace simulator
//! ([`charge_cycle`]), dwell-time analysis of photon traces ([`blink`]),
//! least-squares fitting of model parameters ([`fitting`]) and toy-lattice
//! normal modes feeding Huang–Rhys factors ([`lattice`]).

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blink;
pub mod charge_cycle;
pub mod error;
pub mod fitting;
pub mod effective_mode;
pub mod franck_condon;
pub mod lattice;
pub mod quasi_continuum;
pub mod rate_curve;
pub mod units;

pub use error::{Error, Result};
