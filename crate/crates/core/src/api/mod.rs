//! Participant facade and configuration.

pub mod config;
mod participant;

pub use config::{parse_config, CouplingConfig};
pub use participant::Participant;
