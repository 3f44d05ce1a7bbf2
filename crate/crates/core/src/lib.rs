//! Multi-axis Hyena token mixing.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: tensors, a reverse-mode tape, FFT convolution, rank oracles.
//! * [`filtergen`]: implicit kernels generated by a small network over
//!   positional features, shaped by decay windows.
//! * [`hyena`]: the gated long-convolution recurrence on sequences and grids,
//!   plus multi-directional wrappers.
//! * [`backbone`]: a small ViT-style classifier with interchangeable mixers.
//! * [`theorylab`]: threshold-network constructions and kernel rank reports.

pub mod backbone;
pub mod error;
pub mod filtergen;
pub mod hyena;
pub mod numcore;
pub mod theorylab;

pub use error::{Error, Result};
pub use numcore::{Module, Param, Tape, Tensor, Var};
