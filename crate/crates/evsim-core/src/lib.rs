//! Algorithmic core for an agent-based EV charging simulator.
//!
//! Clustered driver agents learn charging behaviour with deep Q-learning
//! while moving over a weighted road network. The crate is `no_std`
//! (with `alloc`) and fully deterministic given a seed: all collections
//! iterate in a fixed order and every random draw flows through a
//! caller-supplied ChaCha stream.
//!
//! IO, file formats, and the CLI live in the companion `evsim` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod cluster;
pub mod env;
pub mod error;
pub mod math;
pub mod orchestrate;
pub mod rl;
pub mod road;
pub mod scenario;

pub use error::CoreError;
