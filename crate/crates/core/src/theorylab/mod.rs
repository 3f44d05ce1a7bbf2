//! Constructive checks of kernel expressiveness: threshold circuits that
//! realize identity tensors, rank truncation, and rank reports.

mod rank;
mod threshold;
mod verify;

pub use rank::{kernel_rank_report, kernel_rank_report_with_tol, RankReport};
pub use threshold::{
    build_identity_network, evaluate_network_tensor, identity_tensor, truncate_to_rank, ThresholdNetwork,
};
pub use verify::{verify_theory, TheoryCase};
