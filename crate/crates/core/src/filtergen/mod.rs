//! Implicit kernel generation: positional features, filter networks,
//! decay windows and the kernel constructions built from them.

mod encoder;
mod filter;
mod network;
mod window;

pub use encoder::{EncodingMode, PositionalEncoder};
pub use filter::{build_kernel, FilterShape, FilterVariant, ImplicitFilterSpec};
pub use network::{ffn_evaluations, heaviside, reset_ffn_evaluations, Activation, FilterNetwork};
pub use window::{decay_schedule, default_rate_range, window_eval, WindowParams, WindowVariant, DEFAULT_GAMMA};
