//! Oscillator and heat-equation convergence studies on top of `wavecpl`.

pub mod case;
pub mod heat;
pub mod integrators;
pub mod oscillator;
pub mod sweep;
