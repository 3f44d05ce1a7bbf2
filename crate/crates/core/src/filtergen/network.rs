use std::cell::Cell;

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::numcore::{Module, Param, Tape, Tensor, Var};

thread_local! {
    static EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Positions pushed through any filter network on this thread.
pub fn ffn_evaluations() -> u64 {
    EVALUATIONS.with(Cell::get)
}

pub fn reset_ffn_evaluations() {
    EVALUATIONS.with(|c| c.set(0));
}

fn count(n: usize) {
    EVALUATIONS.with(|c| c.set(c.get() + n as u64));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `tanh` on hidden layers, linear output.
    Smooth,
    /// Heaviside step `1[z > 0]` on every layer, output included.
    Sign,
}

pub fn heaviside(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Fully connected network mapping positional features to kernel values.
#[derive(Debug, Clone)]
pub struct FilterNetwork {
    widths: Vec<usize>,
    weights: Vec<Param>,
    biases: Vec<Param>,
    activation: Activation,
}

impl FilterNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new(prefix: &str, widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid(format!("invalid network widths {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            weights.push(Param::glorot(
                format!("{prefix}.layers.{l}.weight"),
                pair[0],
                pair[1],
                rng,
            ));
            biases.push(Param::new(
                format!("{prefix}.layers.{l}.bias"),
                Tensor::zeros(&[pair[1]]),
            ));
        }
        Ok(FilterNetwork {
            widths: widths.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Network with explicit `(in, out)` weight matrices and bias vectors.
    pub fn from_weights(
        prefix: &str,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(invalid("need one bias per weight matrix"));
        }
        let mut widths = vec![weights[0].shape()[0]];
        for (w, b) in weights.iter().zip(&biases) {
            let s = w.shape();
            if s.len() != 2 || s[0] != *widths.last().unwrap() || b.shape() != [s[1]] {
                return Err(shape_err(format!("layer {s:?} with bias {:?}", b.shape())));
            }
            widths.push(s[1]);
        }
        Ok(FilterNetwork {
            widths,
            weights: weights
                .into_iter()
                .enumerate()
                .map(|(l, w)| Param::new(format!("{prefix}.layers.{l}.weight"), w))
                .collect(),
            biases: biases
                .into_iter()
                .enumerate()
                .map(|(l, b)| Param::new(format!("{prefix}.layers.{l}.bias"), b))
                .collect(),
            activation,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.weights[layer].value
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.biases[layer].value
    }

    /// Differentiable forward pass over rows of features `(rows, M)`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.activation != Activation::Smooth {
            return Err(invalid("sign-activated networks are not differentiable"));
        }
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(shape_err(format!(
                "network input {shape:?}, expected (rows, {})",
                self.input_width()
            )));
        }
        count(shape[0]);
        let mut h = x;
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.param(w);
            let bv = tape.param(b);
            h = tape.matmul_last(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if l < last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Plain evaluation of one input vector; the only path for sign mode.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(shape_err(format!(
                "network input length {}, expected {}",
                input.len(),
                self.input_width()
            )));
        }
        count(1);
        let mut h = input.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (fan_in, fan_out) = (w.value.shape()[0], w.value.shape()[1]);
            let wd = w.value.data();
            let mut z = b.value.to_vec();
            for i in 0..fan_in {
                if h[i] == 0.0 {
                    continue;
                }
                for j in 0..fan_out {
                    z[j] += h[i] * wd[i * fan_out + j];
                }
            }
            h = match self.activation {
                Activation::Sign => z.into_iter().map(heaviside).collect(),
                Activation::Smooth if l < last => z.into_iter().map(f64::tanh).collect(),
                Activation::Smooth => z,
            };
        }
        Ok(h)
    }
}

impl Module for FilterNetwork {
    fn params(&self) -> Vec<&Param> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_plain_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FilterNetwork::new("f", &[4, 6, 6, 3], Activation::Smooth, &mut rng).unwrap();
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let y = net.forward(&mut tape, xv).unwrap();
        for r in 0..5 {
            let plain = net.eval(&x.data()[r * 4..(r + 1) * 4]).unwrap();
            for (a, b) in plain.iter().zip(&tape.value(y).data()[r * 3..(r + 1) * 3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sign_outputs_are_ternary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = FilterNetwork::new("f", &[3, 8, 4], Activation::Sign, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(net.eval(&x).unwrap().iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
        }
    }

    #[test]
    fn evaluation_counter_tracks_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FilterNetwork::new("f", &[2, 3], Activation::Smooth, &mut rng).unwrap();
        reset_ffn_evaluations();
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(&[7, 2]));
        net.forward(&mut tape, x).unwrap();
        net.eval(&[0.0, 0.0]).unwrap();
        assert_eq!(ffn_evaluations(), 8);
    }
}
