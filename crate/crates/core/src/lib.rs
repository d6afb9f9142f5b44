//! Simulation core for distributed VCG-style mechanisms.
//!
//! Agents negotiate a social decision through a distributed projected
//! subgradient method. A central authority reads the final decisions,
//! selects median outcomes, and charges VCG-style payments computed from
//! the agents' own budget proposals. The gradient-filtered variant
//! additionally replays every agent's (state, gradient) history through a
//! causal convexity filter and penalises any repair it has to make.
//!
//! The crate is `no_std` and only needs `alloc`. IO, configuration and the
//! experiment runner live in the `mechsim` crate.
//!
//! Module map:
//! * [`numerics`]: evaluation functions, feasible sets, projection QP.
//! * [`distopt`]: communication graph and the negotiation dynamic.
//! * [`filter`]: interleaving and the cyclic-monotonicity gradient filter.
//! * [`mechanism`]: outcome selection, payments, penalties, settlement.
//! * [`game`]: strategy profiles, payoffs, grid equilibrium analysis.
//! * [`scenario`]: EV-charging and synthetic instance builders.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod distopt;
pub mod filter;
pub mod game;
pub mod mechanism;
pub mod numerics;
pub mod scenario;

pub use error::{Error, Result};
