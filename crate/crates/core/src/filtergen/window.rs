use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::numcore::tensor::{advance_index, numel};
use crate::numcore::{Param, Tape, Tensor, Var};

pub const DEFAULT_GAMMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowVariant {
    /// `exp(-α t) + γ` over a single coordinate.
    OneD,
    /// `exp(-α Σ_n i_n) + γ`.
    Symmetric,
    /// `exp(-(α i + β j)) + γ` over two coordinates.
    Dimensional,
    /// Constant 1.
    None,
}

impl WindowVariant {
    /// Required coordinate count, or `None` for any count of at least one.
    pub fn arity(self) -> Option<usize> {
        match self {
            WindowVariant::OneD => Some(1),
            WindowVariant::Dimensional => Some(2),
            WindowVariant::Symmetric | WindowVariant::None => None,
        }
    }

    fn check_arity(self, n: usize) -> Result<()> {
        match self.arity() {
            Some(a) if a != n => Err(invalid(format!("{self:?} window takes {a} coordinates, got {n}"))),
            _ if n == 0 => Err(invalid("window needs at least one coordinate")),
            _ => Ok(()),
        }
    }
}

/// Per-channel decay window. Rates live in a `(2, C)` parameter whose rows
/// hold α and β.
#[derive(Debug, Clone)]
pub struct WindowParams {
    variant: WindowVariant,
    rates: Param,
    gamma: f64,
    learnable: bool,
}

impl WindowParams {
    pub fn new(variant: WindowVariant, alpha: &[f64], beta: &[f64], gamma: f64, learnable: bool) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() {
            return Err(invalid(format!(
                "need matching α and β per channel, got {} and {}",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().chain(beta).any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("decay rates must be finite and nonnegative"));
        }
        if !gamma.is_finite() {
            return Err(invalid("window bias must be finite"));
        }
        let mut data = alpha.to_vec();
        data.extend_from_slice(beta);
        Ok(WindowParams {
            variant,
            rates: Param::new("window.rates", Tensor::from_vec(vec![2, alpha.len()], data)?),
            gamma,
            learnable,
        })
    }

    pub fn none(channels: usize) -> Result<Self> {
        let z = vec![0.0; channels];
        Self::new(WindowVariant::None, &z, &z, 0.0, false)
    }

    pub fn variant(&self) -> WindowVariant {
        self.variant
    }

    pub fn channels(&self) -> usize {
        self.rates.value.shape()[1]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }

    pub fn alpha(&self, c: usize) -> f64 {
        self.rates.value.data()[c]
    }

    pub fn beta(&self, c: usize) -> f64 {
        self.rates.value.data()[self.channels() + c]
    }

    pub(crate) fn rates(&self) -> &Param {
        &self.rates
    }

    pub(crate) fn rates_mut(&mut self) -> &mut Param {
        &mut self.rates
    }

    /// Projects rates back onto the nonnegative orthant after an update.
    pub fn clamp_rates(&mut self) {
        if self.rates.value.data().iter().any(|r| *r < 0.0) {
            for r in self.rates.value.data_mut() {
                *r = r.max(0.0);
            }
        }
    }

    /// Window restricted to a single axis, used by the product construction.
    /// Axis 0 decays with α, later axes with β in the dimensional variant.
    pub(crate) fn axis_rate_row(&self, axis: usize) -> usize {
        match self.variant {
            WindowVariant::Dimensional if axis > 0 => 1,
            _ => 0,
        }
    }

    /// Coordinate features `(L, 2)` whose product with the rate matrix is
    /// the exponent of the window.
    fn coordinate_matrix(&self, axis_lengths: &[usize]) -> Result<Tensor> {
        self.variant.check_arity(axis_lengths.len())?;
        let total = numel(axis_lengths);
        let mut idx = vec![0; axis_lengths.len()];
        let mut data = Vec::with_capacity(2 * total);
        for _ in 0..total {
            match self.variant {
                WindowVariant::Dimensional => data.extend([idx[0] as f64, idx[1] as f64]),
                _ => data.extend([idx.iter().sum::<usize>() as f64, 0.0]),
            }
            advance_index(&mut idx, axis_lengths);
        }
        Tensor::from_vec(vec![total, 2], data)
    }

    /// Window values for every grid position and channel, `(L, C)`, or
    /// `None` when the window is constant 1.
    pub fn on_tape(&self, tape: &mut Tape, axis_lengths: &[usize]) -> Result<Option<Var>> {
        self.variant.check_arity(axis_lengths.len())?;
        if self.variant == WindowVariant::None {
            return Ok(None);
        }
        let z = tape.constant(self.coordinate_matrix(axis_lengths)?);
        let rates = if self.learnable {
            tape.param(&self.rates)
        } else {
            tape.constant(self.rates.value.clone())
        };
        self.exp_window(tape, z, rates).map(Some)
    }

    /// One-axis window `(L_n, C)` for the product construction.
    pub(crate) fn axis_on_tape(&self, tape: &mut Tape, axis: usize, len: usize) -> Result<Option<Var>> {
        if self.variant == WindowVariant::None {
            return Ok(None);
        }
        let row = self.axis_rate_row(axis);
        let mut z = vec![0.0; 2 * len];
        for t in 0..len {
            z[2 * t + row] = t as f64;
        }
        let z = tape.constant(Tensor::from_vec(vec![len, 2], z)?);
        let rates = if self.learnable {
            tape.param(&self.rates)
        } else {
            tape.constant(self.rates.value.clone())
        };
        self.exp_window(tape, z, rates).map(Some)
    }

    fn exp_window(&self, tape: &mut Tape, z: Var, rates: Var) -> Result<Var> {
        let e = tape.matmul_last(z, rates)?;
        let e = tape.scale(e, -1.0)?;
        let w = tape.exp(e)?;
        tape.add_scalar(w, self.gamma)
    }
}

/// Window value at one coordinate for one channel.
pub fn window_eval(coords: &[usize], channel: usize, params: &WindowParams) -> Result<f64> {
    params.variant.check_arity(coords.len())?;
    if channel >= params.channels() {
        return Err(invalid(format!(
            "channel {channel} out of range for {} channels",
            params.channels()
        )));
    }
    let a = params.alpha(channel);
    let exponent = match params.variant {
        WindowVariant::None => return Ok(1.0),
        WindowVariant::OneD | WindowVariant::Symmetric => a * coords.iter().sum::<usize>() as f64,
        WindowVariant::Dimensional => a * coords[0] as f64 + params.beta(channel) * coords[1] as f64,
    };
    Ok((-exponent).exp() + params.gamma)
}

/// Evenly spaced per-channel rates; β is additionally shuffled with a seeded
/// generator so that fast α channels do not pair with fast β channels.
pub fn decay_schedule(
    channels: usize,
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if channels == 0 {
        return Err(invalid("decay schedule needs at least one channel"));
    }
    for (lo, hi) in [alpha_range, beta_range] {
        if lo.is_nan() || lo > hi || lo < 0.0 || !hi.is_finite() {
            return Err(invalid(format!("invalid rate range [{lo}, {hi}]")));
        }
    }
    let spaced = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if channels == 1 {
            return vec![lo];
        }
        (0..channels)
            .map(|c| {
                let t = c as f64 / (channels - 1) as f64;
                lo * (1.0 - t) + hi * t
            })
            .collect()
    };
    let alpha = spaced(alpha_range);
    let mut beta = spaced(beta_range);
    beta.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((alpha, beta))
}

/// Rate range whose fastest channel decays to `e^{-2}` across an axis of
/// `axis_length` positions.
pub fn default_rate_range(axis_length: usize) -> (f64, f64) {
    (0.0, 2.0 / axis_length.max(1) as f64)
}
