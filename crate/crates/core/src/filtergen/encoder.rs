use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::numcore::tensor::{advance_index, numel};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    /// One coordinate, `M / 2` sin/cos pairs.
    OneDimensional,
    /// `N` coordinates, `M / (2N)` pairs each, concatenated axis by axis.
    ConcatenatedPerAxis,
}

/// Sinusoidal features of integer grid coordinates.
///
/// Each axis contributes `[sin(ω_k x) .., cos(ω_k x) ..]` with `x = i / L_n`
/// and `ω_k = 2π f_k`, where `f_k` runs geometrically from 1 to
/// `max_frequency`. The output width is always `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoder {
    width: usize,
    axes: usize,
    mode: EncodingMode,
    frequencies: Vec<f64>,
}

impl PositionalEncoder {
    pub fn one_dimensional(width: usize, max_frequency: f64) -> Result<Self> {
        Self::build(width, 1, EncodingMode::OneDimensional, max_frequency)
    }

    pub fn per_axis(width: usize, axes: usize, max_frequency: f64) -> Result<Self> {
        Self::build(width, axes, EncodingMode::ConcatenatedPerAxis, max_frequency)
    }

    fn build(width: usize, axes: usize, mode: EncodingMode, max_frequency: f64) -> Result<Self> {
        if axes == 0 {
            return Err(invalid("positional encoder needs at least one axis"));
        }
        if width == 0 || !width.is_multiple_of(2 * axes) {
            return Err(invalid(format!("encoding width {width} is not divisible by 2·{axes}")));
        }
        if max_frequency.is_nan() || max_frequency < 1.0 {
            return Err(invalid(format!("max frequency {max_frequency} below 1")));
        }
        let pairs = width / (2 * axes);
        let frequencies = (0..pairs)
            .map(|k| {
                if pairs == 1 {
                    1.0
                } else {
                    max_frequency.powf(k as f64 / (pairs - 1) as f64)
                }
            })
            .collect();
        Ok(PositionalEncoder {
            width,
            axes,
            mode,
            frequencies,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn mode(&self) -> EncodingMode {
        self.mode
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn encode(&self, coords: &[usize], axis_lengths: &[usize]) -> Result<Vec<f64>> {
        if coords.len() != self.axes || axis_lengths.len() != self.axes {
            return Err(invalid(format!(
                "encoder built for {} axes, got {} coordinates",
                self.axes,
                coords.len()
            )));
        }
        let mut out = Vec::with_capacity(self.width);
        for (&c, &len) in coords.iter().zip(axis_lengths) {
            if c >= len {
                return Err(invalid(format!("coordinate {c} outside axis of length {len}")));
            }
            let x = c as f64 / len as f64;
            out.extend(self.frequencies.iter().map(|f| (2.0 * PI * f * x).sin()));
            out.extend(self.frequencies.iter().map(|f| (2.0 * PI * f * x).cos()));
        }
        Ok(out)
    }

    /// Encodings of every coordinate of the grid in row-major order, `(L, M)`.
    pub fn encode_grid(&self, axis_lengths: &[usize]) -> Result<Tensor> {
        let total = numel(axis_lengths);
        let mut idx = vec![0; axis_lengths.len()];
        let mut data = Vec::with_capacity(total * self.width);
        for _ in 0..total {
            data.extend(self.encode(&idx, axis_lengths)?);
            advance_index(&mut idx, axis_lengths);
        }
        Tensor::from_vec(vec![total, self.width], data)
    }
}
