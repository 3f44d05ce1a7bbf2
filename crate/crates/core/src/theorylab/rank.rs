use crate::error::{invalid, Result};
use crate::numcore::{matrix_rank, unfold, Tensor, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankReport {
    /// Matrix rank when the kernel has exactly two axes.
    pub exact_rank_2d: Option<usize>,
    /// Rank of the mode-`n` unfolding for every axis `n`.
    pub unfolding_ranks: Vec<usize>,
}

impl RankReport {
    /// Largest unfolding rank; a lower bound on the tensor rank.
    pub fn lower_bound(&self) -> usize {
        self.unfolding_ranks.iter().copied().max().unwrap_or(0)
    }
}

pub fn kernel_rank_report(kernel: &Tensor) -> Result<RankReport> {
    kernel_rank_report_with_tol(kernel, DEFAULT_RANK_TOL)
}

pub fn kernel_rank_report_with_tol(kernel: &Tensor, rel_tol: f64) -> Result<RankReport> {
    if kernel.ndim() < 2 {
        return Err(invalid(format!(
            "rank report needs at least two axes, got {:?}",
            kernel.shape()
        )));
    }
    let unfolding_ranks = (0..kernel.ndim())
        .map(|a| matrix_rank(&unfold(kernel, a)?, rel_tol))
        .collect::<Result<Vec<_>>>()?;
    let exact_rank_2d = (kernel.ndim() == 2).then(|| unfolding_ranks[0]);
    Ok(RankReport {
        exact_rank_2d,
        unfolding_ranks,
    })
}
