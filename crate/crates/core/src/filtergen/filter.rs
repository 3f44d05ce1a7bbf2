use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;

use super::encoder::PositionalEncoder;
use super::network::{Activation, FilterNetwork};
use super::window::WindowParams;
use crate::error::{invalid, shape_err, Result};
use crate::numcore::{Module, Param, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVariant {
    /// One network over the raster position of a sequence.
    Implicit1d,
    /// One network over all `N` grid coordinates jointly.
    ImplicitNd,
    /// One 1-D network per axis; channels combine by outer product.
    ProductNd,
}

/// Shape hyperparameters for [`ImplicitFilterSpec::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterShape {
    pub variant: FilterVariant,
    pub axes: usize,
    pub channels: usize,
    pub order: usize,
    pub encoding_width: usize,
    pub hidden_layers: usize,
    pub max_frequency: f64,
}

impl FilterShape {
    pub fn new(variant: FilterVariant, axes: usize, channels: usize, order: usize) -> Self {
        FilterShape {
            variant,
            axes,
            channels,
            order,
            encoding_width: 32,
            hidden_layers: 2,
            max_frequency: 16.0,
        }
    }
}

/// Implicitly parameterized long-convolution kernels.
///
/// Each network emits `(N̂+1)·C` values per position. Order step `n` in
/// `1..=N̂` reads columns `n·C..(n+1)·C`; the first block is unused by the
/// recurrence, which takes `x⁰` without a kernel.
pub struct ImplicitFilterSpec {
    variant: FilterVariant,
    axes: usize,
    channels: usize,
    order: usize,
    encoder: PositionalEncoder,
    networks: Vec<FilterNetwork>,
    window: WindowParams,
    cache: Mutex<HashMap<Vec<usize>, Vec<Tensor>>>,
}

impl Clone for ImplicitFilterSpec {
    fn clone(&self) -> Self {
        ImplicitFilterSpec {
            variant: self.variant,
            axes: self.axes,
            channels: self.channels,
            order: self.order,
            encoder: self.encoder.clone(),
            networks: self.networks.clone(),
            window: self.window.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl std::fmt::Debug for ImplicitFilterSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImplicitFilterSpec")
            .field("variant", &self.variant)
            .field("axes", &self.axes)
            .field("channels", &self.channels)
            .field("order", &self.order)
            .field("window", &self.window.variant())
            .finish_non_exhaustive()
    }
}

impl ImplicitFilterSpec {
    pub fn new(shape: &FilterShape, window: WindowParams, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        let m = shape.encoding_width;
        let encoder = match shape.variant {
            FilterVariant::ImplicitNd => PositionalEncoder::per_axis(m, shape.axes, shape.max_frequency)?,
            _ => PositionalEncoder::one_dimensional(m, shape.max_frequency)?,
        };
        let mut widths = vec![m; shape.hidden_layers + 1];
        widths.push((shape.order + 1) * shape.channels);
        let count = match shape.variant {
            FilterVariant::ProductNd => shape.axes,
            _ => 1,
        };
        let networks = (0..count)
            .map(|a| {
                let name = if count == 1 {
                    format!("{prefix}.ffn")
                } else {
                    format!("{prefix}.ffn{a}")
                };
                FilterNetwork::new(&name, &widths, Activation::Smooth, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut spec = Self::from_parts(
            shape.variant,
            shape.axes,
            shape.channels,
            shape.order,
            encoder,
            networks,
            window,
        )?;
        spec.window.rates_mut().name = format!("{prefix}.window.rates");
        Ok(spec)
    }

    pub fn from_parts(
        variant: FilterVariant,
        axes: usize,
        channels: usize,
        order: usize,
        encoder: PositionalEncoder,
        networks: Vec<FilterNetwork>,
        window: WindowParams,
    ) -> Result<Self> {
        if axes == 0 || channels == 0 || order == 0 {
            return Err(invalid("filter needs at least one axis, channel and order step"));
        }
        if variant == FilterVariant::Implicit1d && axes != 1 {
            return Err(invalid("the 1-D filter generates kernels over a single axis"));
        }
        let expected_nets = if variant == FilterVariant::ProductNd { axes } else { 1 };
        if networks.len() != expected_nets {
            return Err(invalid(format!(
                "{variant:?} needs {expected_nets} networks, got {}",
                networks.len()
            )));
        }
        let encoder_axes = if variant == FilterVariant::ImplicitNd { axes } else { 1 };
        if encoder.axes() != encoder_axes {
            return Err(invalid(format!(
                "encoder covers {} axes, {variant:?} needs {encoder_axes}",
                encoder.axes()
            )));
        }
        for net in &networks {
            if net.input_width() != encoder.width() || net.output_width() != (order + 1) * channels {
                return Err(shape_err(format!(
                    "network {:?} incompatible with encoder width {} and output {}",
                    net.widths(),
                    encoder.width(),
                    (order + 1) * channels
                )));
            }
        }
        if window.channels() != channels {
            return Err(shape_err(format!(
                "window has {} channels, filter has {channels}",
                window.channels()
            )));
        }
        if variant != FilterVariant::ProductNd {
            if let Some(a) = window.variant().arity() {
                if a != axes {
                    return Err(invalid(format!(
                        "{:?} window cannot cover {axes} axes",
                        window.variant()
                    )));
                }
            }
        }
        Ok(ImplicitFilterSpec {
            variant,
            axes,
            channels,
            order,
            encoder,
            networks,
            window,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn variant(&self) -> FilterVariant {
        self.variant
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn encoder(&self) -> &PositionalEncoder {
        &self.encoder
    }

    pub fn networks(&self) -> &[FilterNetwork] {
        &self.networks
    }

    pub fn window(&self) -> &WindowParams {
        &self.window
    }

    pub fn window_mut(&mut self) -> &mut WindowParams {
        self.invalidate();
        &mut self.window
    }

    pub fn invalidate(&self) {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    /// Kernels for every order step, each `(C, L_1, .., L_N)`.
    ///
    /// On a gradient-free tape the result is memoized per grid shape until
    /// the parameters are next borrowed mutably.
    pub fn build_kernels(&self, tape: &mut Tape, axis_lengths: &[usize]) -> Result<Vec<Var>> {
        if axis_lengths.len() != self.axes || axis_lengths.contains(&0) {
            return Err(invalid(format!(
                "filter over {} axes cannot cover grid {axis_lengths:?}",
                self.axes
            )));
        }
        if !tape.grad_enabled() {
            let cached = self
                .cache
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get(axis_lengths)
                .cloned();
            if let Some(kernels) = cached {
                return Ok(kernels.into_iter().map(|k| tape.constant(k)).collect());
            }
        }
        let kernels = match self.variant {
            FilterVariant::ProductNd => self.product_kernels(tape, axis_lengths)?,
            _ => self.implicit_kernels(tape, axis_lengths)?,
        };
        if !tape.grad_enabled() {
            let values = kernels.iter().map(|&k| tape.value(k).clone()).collect();
            self.cache
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(axis_lengths.to_vec(), values);
        }
        Ok(kernels)
    }

    /// Kernel for order step `n` in `1..=N̂`.
    pub fn build_kernel(&self, tape: &mut Tape, axis_lengths: &[usize], order_step: usize) -> Result<Var> {
        self.check_step(order_step)?;
        Ok(self.build_kernels(tape, axis_lengths)?[order_step - 1])
    }

    fn check_step(&self, order_step: usize) -> Result<()> {
        if order_step == 0 || order_step > self.order {
            return Err(invalid(format!("order step {order_step} outside 1..={}", self.order)));
        }
        Ok(())
    }

    fn run_network(&self, tape: &mut Tape, net: &FilterNetwork, features: Tensor) -> Result<Var> {
        match net.activation() {
            Activation::Smooth => {
                let x = tape.constant(features);
                net.forward(tape, x)
            }
            Activation::Sign => {
                let (rows, width) = (features.shape()[0], features.shape()[1]);
                let mut out = Vec::with_capacity(rows * net.output_width());
                for r in 0..rows {
                    out.extend(net.eval(&features.data()[r * width..(r + 1) * width])?);
                }
                Ok(tape.constant(Tensor::from_vec(vec![rows, net.output_width()], out)?))
            }
        }
    }

    fn implicit_kernels(&self, tape: &mut Tape, axis_lengths: &[usize]) -> Result<Vec<Var>> {
        let c = self.channels;
        let features = self.encoder.encode_grid(axis_lengths)?;
        let out = self.run_network(tape, &self.networks[0], features)?;
        let window = self.window.on_tape(tape, axis_lengths)?;
        let mut shape = vec![c];
        shape.extend_from_slice(axis_lengths);
        (1..=self.order)
            .map(|n| {
                let mut k = tape.slice_last(out, n * c, c)?;
                if let Some(w) = window {
                    k = tape.mul(k, w)?;
                }
                let k = tape.permute(k, &[1, 0])?;
                tape.reshape(k, &shape)
            })
            .collect()
    }

    fn product_kernels(&self, tape: &mut Tape, axis_lengths: &[usize]) -> Result<Vec<Var>> {
        let c = self.channels;
        let mut per_axis = Vec::with_capacity(self.axes);
        for (a, &len) in axis_lengths.iter().enumerate() {
            let features = self.encoder.encode_grid(&[len])?;
            let out = self.run_network(tape, &self.networks[a], features)?;
            let window = self.window.axis_on_tape(tape, a, len)?;
            let factors = (1..=self.order)
                .map(|n| {
                    let mut k = tape.slice_last(out, n * c, c)?;
                    if let Some(w) = window {
                        k = tape.mul(k, w)?;
                    }
                    tape.permute(k, &[1, 0])
                })
                .collect::<Result<Vec<_>>>()?;
            per_axis.push(factors);
        }
        (0..self.order)
            .map(|n| {
                let factors: Vec<Var> = per_axis.iter().map(|f| f[n]).collect();
                tape.channel_outer(&factors)
            })
            .collect()
    }
}

impl Module for ImplicitFilterSpec {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.networks.iter().flat_map(|n| n.params()).collect();
        if self.window.learnable() {
            out.push(self.window.rates());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.invalidate();
        let learnable = self.window.learnable();
        let mut out: Vec<&mut Param> = self.networks.iter_mut().flat_map(|n| n.params_mut()).collect();
        if learnable {
            out.push(self.window.rates_mut());
        }
        out
    }

    fn state(&self) -> Vec<&Param> {
        if self.window.learnable() {
            Vec::new()
        } else {
            vec![self.window.rates()]
        }
    }

    fn state_mut(&mut self) -> Vec<&mut Param> {
        self.invalidate();
        if self.window.learnable() {
            Vec::new()
        } else {
            vec![self.window.rates_mut()]
        }
    }
}

/// Evaluates one kernel slice outside of any training graph.
pub fn build_kernel(spec: &ImplicitFilterSpec, axis_lengths: &[usize], order_step: usize) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let k = spec.build_kernel(&mut tape, axis_lengths, order_step)?;
    Ok(tape.value(k).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtergen::network::{ffn_evaluations, reset_ffn_evaluations};
    use crate::filtergen::window::WindowVariant;
    use crate::numcore::{matrix_rank, DEFAULT_RANK_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filter(
        variant: FilterVariant,
        axes: usize,
        c: usize,
        order: usize,
        window: WindowParams,
        seed: u64,
    ) -> ImplicitFilterSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = FilterShape::new(variant, axes, c, order);
        shape.encoding_width = 8;
        ImplicitFilterSpec::new(&shape, window, "f", &mut rng).unwrap()
    }

    fn dimensional(c: usize, a: f64, b: f64, g: f64) -> WindowParams {
        WindowParams::new(WindowVariant::Dimensional, &vec![a; c], &vec![b; c], g, false).unwrap()
    }

    #[test]
    fn implicit_nd_slice_shape() {
        let f = filter(FilterVariant::ImplicitNd, 2, 4, 2, dimensional(4, 0.1, 0.1, 0.01), 1);
        for n in 1..=2 {
            assert_eq!(build_kernel(&f, &[8, 8], n).unwrap().shape(), &[4, 8, 8]);
        }
        assert!(build_kernel(&f, &[8, 8], 0).is_err());
        assert!(build_kernel(&f, &[8, 8], 3).is_err());
        assert!(build_kernel(&f, &[8], 1).is_err());
    }

    #[test]
    fn product_channels_have_rank_one() {
        let f = filter(FilterVariant::ProductNd, 2, 3, 2, dimensional(3, 0.2, 0.05, 0.01), 2);
        let k = build_kernel(&f, &[8, 6], 1).unwrap();
        for c in 0..3 {
            let slice = Tensor::from_vec(vec![8, 6], k.data()[c * 48..(c + 1) * 48].to_vec()).unwrap();
            assert!(matrix_rank(&slice, DEFAULT_RANK_TOL).unwrap() <= 1);
        }
    }

    #[test]
    fn none_window_equals_zero_rate_dimensional() {
        let a = filter(FilterVariant::ImplicitNd, 2, 2, 2, WindowParams::none(2).unwrap(), 3);
        let b = filter(FilterVariant::ImplicitNd, 2, 2, 2, dimensional(2, 0.0, 0.0, 0.0), 3);
        for n in 1..=2 {
            assert_eq!(
                build_kernel(&a, &[5, 4], n).unwrap(),
                build_kernel(&b, &[5, 4], n).unwrap()
            );
        }
    }

    #[test]
    fn evaluations_scale_with_grid_size() {
        let f = filter(FilterVariant::ImplicitNd, 2, 2, 1, WindowParams::none(2).unwrap(), 4);
        let mut counts = Vec::new();
        for grid in [[4, 4], [8, 4]] {
            reset_ffn_evaluations();
            let mut tape = Tape::new();
            f.build_kernels(&mut tape, &grid).unwrap();
            counts.push(ffn_evaluations());
        }
        assert_eq!(counts[1], 2 * counts[0]);
    }

    #[test]
    fn inference_kernels_are_memoized_until_mutation() {
        let mut f = filter(FilterVariant::Implicit1d, 1, 2, 1, WindowParams::none(2).unwrap(), 5);
        reset_ffn_evaluations();
        let first = build_kernel(&f, &[16], 1).unwrap();
        let second = build_kernel(&f, &[16], 1).unwrap();
        assert_eq!(first, second);
        assert_eq!(ffn_evaluations(), 16);
        f.params_mut()[0].value.data_mut()[0] += 0.5;
        let third = build_kernel(&f, &[16], 1).unwrap();
        assert_eq!(ffn_evaluations(), 32);
        assert_ne!(first, third);
    }

    #[test]
    fn rejects_mismatched_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut shape = FilterShape::new(FilterVariant::ImplicitNd, 3, 2, 1);
        shape.encoding_width = 12;
        let w = dimensional(2, 0.1, 0.1, 0.0);
        assert!(ImplicitFilterSpec::new(&shape, w, "f", &mut rng).is_err());
    }

    #[test]
    fn learnable_rates_receive_gradients() {
        let w = WindowParams::new(WindowVariant::Symmetric, &[0.1, 0.2], &[0.0, 0.0], 0.01, true).unwrap();
        let f = filter(FilterVariant::ImplicitNd, 2, 2, 1, w, 7);
        assert_eq!(f.params().len(), 7);
        let mut tape = Tape::new();
        let k = f.build_kernel(&mut tape, &[3, 3], 1).unwrap();
        let k2 = tape.mul(k, k).unwrap();
        let loss = tape.sum(k2).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = tape.param_gradients(&grads, &[f.window().rates()]);
        assert!(g[0].data()[..2].iter().any(|v| v.abs() > 0.0));
    }
}
