use rand::Rng;

use super::config::{Direction, HyenaConfig, HyenaVariant};
use crate::error::{invalid, shape_err, Result};
use crate::filtergen::{decay_schedule, default_rate_range, FilterShape, ImplicitFilterSpec, WindowParams};
use crate::numcore::{ConvBackend, Module, Param, Tape, Tensor, Var};

/// Parameters used only by the four-directional wrapper.
#[derive(Debug, Clone)]
struct FourDir {
    scales: Vec<Param>,
    aggregate: Param,
}

/// Hyena token mixer over `(B, L_1..L_N, C)` inputs.
#[derive(Debug, Clone)]
pub struct HyenaLayer {
    config: HyenaConfig,
    in_weight: Param,
    in_bias: Param,
    short: Param,
    filter: ImplicitFilterSpec,
    out_weight: Param,
    out_bias: Param,
    residual: Vec<Param>,
    four: Option<FourDir>,
    kernel_override: Option<Vec<Tensor>>,
}

impl HyenaLayer {
    pub fn new(config: HyenaConfig, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let s = config.streams();
        let k = config.short_filter_size;
        let kn = config.kernel_axes();

        let mut short_shape = vec![s];
        short_shape.extend(std::iter::repeat_n(k, kn));
        let fan = k.pow(kn as u32) as f64;
        let short = Param::new(
            format!("{prefix}.short"),
            Tensor::uniform(&short_shape, fan.sqrt().recip(), rng),
        );

        let range = default_rate_range(config.kernel_reference_length());
        let (alpha, beta) = decay_schedule(c, range, range, rng.random())?;
        let window = WindowParams::new(config.window, &alpha, &beta, config.gamma, config.learnable_window)?;
        let mut shape = FilterShape::new(config.variant.filter_variant(), kn, c, config.order);
        shape.encoding_width = config.encoding_width;
        shape.hidden_layers = config.hidden_layers;
        shape.max_frequency = (config.kernel_reference_length() as f64 / 2.0).max(1.0);
        let filter = ImplicitFilterSpec::new(&shape, window, &format!("{prefix}.filter"), rng)?;

        let residual = if config.residual_bias {
            (1..=config.order)
                .map(|n| Param::new(format!("{prefix}.residual.{n}"), Tensor::zeros(&[c])))
                .collect()
        } else {
            Vec::new()
        };

        let mut layer = HyenaLayer {
            in_weight: Param::glorot(format!("{prefix}.in_proj.weight"), c, s, rng),
            in_bias: Param::new(format!("{prefix}.in_proj.bias"), Tensor::zeros(&[s])),
            short,
            filter,
            out_weight: Param::glorot(format!("{prefix}.out_proj.weight"), c, c, rng),
            out_bias: Param::new(format!("{prefix}.out_proj.bias"), Tensor::zeros(&[c])),
            residual,
            four: None,
            kernel_override: None,
            config: HyenaConfig {
                direction: Direction::Causal,
                ..config.clone()
            },
        };
        if config.direction != Direction::Causal {
            layer = wrap_multidirectional(layer, config.direction)?;
        }
        Ok(layer)
    }

    pub fn config(&self) -> &HyenaConfig {
        &self.config
    }

    pub fn filter(&self) -> &ImplicitFilterSpec {
        &self.filter
    }

    pub fn filter_mut(&mut self) -> &mut ImplicitFilterSpec {
        &mut self.filter
    }

    /// Replaces the generated kernels with fixed `(C, L_1..L_N)` tensors,
    /// one per order step. `None` restores the implicit filter.
    pub fn set_kernel_override(&mut self, kernels: Option<Vec<Tensor>>) -> Result<()> {
        if let Some(k) = &kernels {
            if k.len() != self.config.order {
                return Err(invalid(format!("need {} kernels, got {}", self.config.order, k.len())));
            }
        }
        self.kernel_override = kernels;
        Ok(())
    }

    /// Clamps learnable window rates; call after every parameter update.
    pub fn project_params(&mut self) {
        if self.filter.window().learnable() {
            self.filter.window_mut().clamp_rates();
        }
    }

    pub fn forward(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let shape = tape.shape(u).to_vec();
        let n = self.config.axes;
        if shape.len() != n + 2 || shape[n + 1] != self.config.channels {
            return Err(shape_err(format!(
                "Hyena input {shape:?}, expected (B, {n} axes, {})",
                self.config.channels
            )));
        }
        let Some(four) = &self.four else {
            return self.mix(tape, u);
        };
        if shape[1] != shape[2] {
            return Err(invalid(format!(
                "four-directional mixing needs a square grid, got {}×{}",
                shape[1], shape[2]
            )));
        }
        let mut outs = Vec::with_capacity(4);
        for (k, scale) in four.scales.iter().enumerate() {
            let s = tape.param(scale);
            let x = tape.mul_bias(u, s)?;
            let x = tape.rotate(x, 1, k)?;
            let y = self.mix(tape, x)?;
            outs.push(tape.rotate(y, 1, (4 - k) % 4)?);
        }
        let cat = tape.concat_last(&outs)?;
        let w = tape.param(&four.aggregate);
        tape.matmul_last(cat, w)
    }

    /// Projection, short filter, gated long-convolution recurrence and
    /// output projection.
    fn mix(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let c = self.config.channels;
        let shape = tape.shape(u).to_vec();
        let x = match self.config.variant {
            HyenaVariant::Hyena1d => {
                let tokens = shape[1..shape.len() - 1].iter().product();
                tape.reshape(u, &[shape[0], tokens, c])?
            }
            _ => u,
        };
        let grid = tape.shape(x)[1..tape.shape(x).len() - 1].to_vec();
        let spatial: Vec<usize> = (1..=grid.len()).collect();

        let w = tape.param(&self.in_weight);
        let b = tape.param(&self.in_bias);
        let z = tape.matmul_last(x, w)?;
        let z = tape.add_bias(z, b)?;
        let h = tape.param(&self.short);
        let z = tape.causal_conv(z, h, ConvBackend::Direct)?;

        let kernels = match &self.kernel_override {
            Some(k) => k.iter().map(|t| tape.constant(t.clone())).collect(),
            None => self.filter.build_kernels(tape, &grid)?,
        };

        let mut v = tape.slice_last(z, 0, c)?;
        for step in 1..=self.config.order {
            let gate = tape.slice_last(z, step * c, c)?;
            let reversed = self.config.direction == Direction::TwoDir && step % 2 == 0;
            if reversed {
                v = tape.flip(v, &spatial)?;
            }
            let mut y = tape.causal_conv(v, kernels[step - 1], ConvBackend::Fft)?;
            if let Some(d) = self.residual.get(step - 1) {
                let d = tape.param(d);
                let skip = tape.mul_bias(v, d)?;
                y = tape.add(y, skip)?;
            }
            if reversed {
                y = tape.flip(y, &spatial)?;
            }
            v = tape.mul(gate, y)?;
        }

        let w = tape.param(&self.out_weight);
        let b = tape.param(&self.out_bias);
        let y = tape.matmul_last(v, w)?;
        let y = tape.add_bias(y, b)?;
        tape.reshape(y, &shape)
    }
}

impl Module for HyenaLayer {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.in_weight, &self.in_bias, &self.short];
        out.extend(self.filter.params());
        out.extend([&self.out_weight, &self.out_bias]);
        out.extend(&self.residual);
        if let Some(f) = &self.four {
            out.extend(&f.scales);
            out.push(&f.aggregate);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.in_weight, &mut self.in_bias, &mut self.short];
        out.extend(self.filter.params_mut());
        out.extend([&mut self.out_weight, &mut self.out_bias]);
        out.extend(&mut self.residual);
        if let Some(f) = &mut self.four {
            out.extend(&mut f.scales);
            out.push(&mut f.aggregate);
        }
        out
    }

    fn state(&self) -> Vec<&Param> {
        self.filter.state()
    }

    fn state_mut(&mut self) -> Vec<&mut Param> {
        self.filter.state_mut()
    }
}

/// Turns a causal layer into a two- or four-directional one.
///
/// The four-directional aggregation starts as the average of the four
/// directions and every input scale starts at one.
pub fn wrap_multidirectional(mut layer: HyenaLayer, mode: Direction) -> Result<HyenaLayer> {
    if layer.config.direction != Direction::Causal {
        return Err(invalid("layer is already multi-directional"));
    }
    let config = layer.config.clone().with_direction(mode);
    config.validate()?;
    if mode == Direction::FourDir {
        let c = config.channels;
        let prefix = layer
            .in_weight
            .name
            .strip_suffix(".in_proj.weight")
            .unwrap_or("hyena")
            .to_string();
        let scales = (0..4)
            .map(|k| Param::new(format!("{prefix}.four_dir.scale.{k}"), Tensor::full(&[c], 1.0)))
            .collect();
        let aggregate = Tensor::from_fn(&[4 * c, c], |i| if i[0] % c == i[1] { 0.25 } else { 0.0 });
        layer.four = Some(FourDir {
            scales,
            aggregate: Param::new(format!("{prefix}.four_dir.aggregate"), aggregate),
        });
        layer.config = HyenaConfig {
            direction: Direction::FourDir,
            ..config
        };
    } else {
        layer.config = config;
    }
    Ok(layer)
}

/// Depthwise same-shape convolution of `(B, L_1..L_N, C)` with odd-sized
/// kernels `(C, K_1..K_N)`, zero-padded on the low side of every axis.
pub fn short_conv(stream: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if weights.shape()[1..].iter().any(|k| k % 2 == 0) {
        return Err(invalid(format!(
            "short filter {:?} has an even extent",
            &weights.shape()[1..]
        )));
    }
    let mut tape = Tape::inference();
    let u = tape.constant(stream.clone());
    let h = tape.constant(weights.clone());
    let y = tape.causal_conv(u, h, ConvBackend::Direct)?;
    Ok(tape.value(y).clone())
}

/// Evaluates a layer on a concrete input outside of any training graph.
pub fn hyena_forward(layer: &HyenaLayer, u: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let x = tape.constant(u.clone());
    let y = layer.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}
