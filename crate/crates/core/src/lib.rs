//! Waveform-iteration coupling for partitioned time-stepping solvers.
//!
//! Two participants exchange time-interpolated interface data per time window
//! and iterate until the window converges.

pub mod acceleration;
pub mod api;
pub mod comm;
pub mod cplscheme;
pub mod error;
pub mod mapping;
pub mod storage;
pub mod waveform;

pub use api::{parse_config, CouplingConfig, Participant};
pub use error::{Error, Result};
pub use mapping::{MappingKind, MappingPlan, Mesh};
pub use storage::{Sample, Stample, Storage};
pub use waveform::Waveform;
