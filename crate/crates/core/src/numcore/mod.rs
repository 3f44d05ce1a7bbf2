//! Dense tensors, reverse-mode gradients, causal FFT convolution, rank
//! oracles, grid rotations and payload memory accounting.

pub mod conv;
pub mod fft;
pub mod gradcheck;
pub mod linalg;
pub mod memory;
pub mod ops;
pub mod param;
pub mod tape;
pub mod tensor;

pub use conv::{direct_conv_oracle, fft_conv_causal, ConvBackend};
pub use linalg::{matrix_rank, singular_values, unfold, DEFAULT_RANK_TOL};
pub use memory::{memory_stats, reset_peak, MemoryLedger};
pub use ops::{flip, outer_product, rotate_grid};
pub use param::{Module, Param, ParamId};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
