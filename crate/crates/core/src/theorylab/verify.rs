use std::fmt;

use super::rank::kernel_rank_report;
use super::threshold::{build_identity_network, evaluate_network_tensor, identity_tensor, truncate_to_rank};
use crate::error::Result;

/// Outcome of one `(N, r, r')` construction check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TheoryCase {
    pub axes: usize,
    pub length: usize,
    pub rank: usize,
    pub pattern_exact: bool,
    pub measured_rank: usize,
}

impl TheoryCase {
    pub fn passed(&self) -> bool {
        self.pattern_exact && self.measured_rank == self.rank
    }
}

impl fmt::Display for TheoryCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} n={} r={} r'={} pattern={} rank={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.axes,
            self.length,
            self.rank,
            if self.pattern_exact { "exact" } else { "mismatch" },
            self.measured_rank
        )
    }
}

/// Builds the identity circuit for `(N, r)` and checks every truncation
/// `r' ∈ [2, r]` by exhaustive evaluation. Two-axis ranks are exact matrix
/// ranks; higher orders use the unfolding lower bound.
pub fn verify_theory(axes: usize, length: usize) -> Result<Vec<TheoryCase>> {
    let net = build_identity_network(axes, length)?;
    (2..=length)
        .map(|rank| {
            let t = evaluate_network_tensor(&truncate_to_rank(&net, rank)?)?;
            let report = kernel_rank_report(&t)?;
            Ok(TheoryCase {
                axes,
                length,
                rank,
                pattern_exact: t == identity_tensor(axes, length, rank),
                measured_rank: report.exact_rank_2d.unwrap_or_else(|| report.lower_bound()),
            })
        })
        .collect()
}
