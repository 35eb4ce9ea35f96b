//! Simulation and analysis toolkit for zero-dynamics attacks on second-order
//! multi-agent consensus networks, and for switching-topology defenses against them.

pub mod attack;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod observability;
pub mod observer;
pub mod scenario;
pub mod switching;

pub use error::{Error, Result};
