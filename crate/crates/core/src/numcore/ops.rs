//! Tape-free entry points for single tensors.

use super::tape::{flip_axes, rotate_axes};
use super::tensor::{advance_index, numel, Tensor};
use crate::error::{invalid, Error, Result};

/// `result[i_1..i_N] = Π_n v_n[i_n]`.
pub fn outer_product(vectors: &[&[f64]]) -> Result<Tensor> {
    if vectors.is_empty() {
        return Err(Error::Empty("outer product needs at least one vector"));
    }
    if vectors.iter().any(|v| v.is_empty()) {
        return Err(Error::Empty("outer product factor"));
    }
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let mut idx = vec![0; shape.len()];
    let mut out = Vec::with_capacity(numel(&shape));
    for _ in 0..numel(&shape) {
        out.push(idx.iter().zip(vectors).map(|(&i, v)| v[i]).product());
        advance_index(&mut idx, &shape);
    }
    let t = Tensor::from_vec(shape, out)?;
    t.ensure_finite("outer product")?;
    Ok(t)
}

/// Clockwise rotation of a 2-D grid by `quarter_turns · 90°`.
///
/// Odd turns need a square grid. Two turns reverse both axes and work on any
/// shape.
pub fn rotate_grid(grid: &Tensor, quarter_turns: usize) -> Result<Tensor> {
    if grid.ndim() != 2 {
        return Err(invalid(format!(
            "rotate_grid expects a 2-D grid, got {:?}",
            grid.shape()
        )));
    }
    if quarter_turns > 3 {
        return Err(invalid(format!("quarter_turns must be in 0..=3, got {quarter_turns}")));
    }
    rotate_axes(grid, 0, quarter_turns)
}

/// Reverses every listed axis.
pub fn flip(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    flip_axes(t, axes)
}
