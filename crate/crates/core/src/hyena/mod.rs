//! Hyena token mixing over sequences and grids.

mod config;
mod layer;

pub use config::{Direction, HyenaConfig, HyenaVariant};
pub use layer::{hyena_forward, short_conv, wrap_multidirectional, HyenaLayer};
