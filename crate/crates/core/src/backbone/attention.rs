use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::numcore::{Module, Param, Tape, Tensor, Var};

/// Affine map over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::glorot(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[fan_out]))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let y = tape.matmul_last(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.weight];
        out.extend(&self.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.weight];
        out.extend(&mut self.bias);
        out
    }
}

/// Multi-head self-attention with a learned additive positional table.
///
/// The key projection has no bias: it would add the same `q·b` to every
/// score in a row and cancel in the softmax.
#[derive(Debug, Clone)]
pub struct AttentionMixer {
    heads: usize,
    channels: usize,
    pub position: Param,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionMixer {
    pub fn new(name: &str, channels: usize, heads: usize, tokens: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(invalid(format!("{channels} channels cannot split into {heads} heads")));
        }
        if tokens == 0 {
            return Err(invalid("attention needs at least one token"));
        }
        Ok(AttentionMixer {
            heads,
            channels,
            position: Param::new(
                format!("{name}.position"),
                Tensor::randn(&[tokens, channels], 0.02, rng),
            ),
            query: Linear::new(&format!("{name}.query"), channels, channels, true, rng),
            key: Linear::new(&format!("{name}.key"), channels, channels, false, rng),
            value: Linear::new(&format!("{name}.value"), channels, channels, true, rng),
            output: Linear::new(&format!("{name}.output"), channels, channels, true, rng),
        })
    }

    pub fn tokens(&self) -> usize {
        self.position.value.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Mixes all tokens of `(B, .., C)`; the middle axes are read in raster
    /// order and restored on output.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let c = self.channels;
        if shape.len() < 3 || shape[shape.len() - 1] != c {
            return Err(shape_err(format!("attention input {shape:?} with width {c}")));
        }
        let b = shape[0];
        let t: usize = shape[1..shape.len() - 1].iter().product();
        if t != self.tokens() {
            return Err(shape_err(format!(
                "attention built for {} tokens, got {t}",
                self.tokens()
            )));
        }
        let (h, d) = (self.heads, c / self.heads);

        let flat = tape.reshape(x, &[b, t * c])?;
        let pos = tape.param(&self.position);
        let pos = tape.reshape(pos, &[t * c])?;
        let flat = tape.add_bias(flat, pos)?;
        let x = tape.reshape(flat, &[b, t, c])?;

        let split = |tape: &mut Tape, v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[b, t, h, d])?;
            tape.permute(v, &[0, 2, 1, 3])
        };
        let q = self.query.forward(tape, x)?;
        let q = split(tape, q)?;
        let k = self.key.forward(tape, x)?;
        let k = split(tape, k)?;
        let v = self.value.forward(tape, x)?;
        let v = split(tape, v)?;

        let scores = tape.batch_matmul(q, k, true, 1.0 / (d as f64).sqrt())?;
        let probs = tape.softmax_last(scores)?;
        let o = tape.batch_matmul(probs, v, false, 1.0)?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b, t, c])?;
        let y = self.output.forward(tape, o)?;
        tape.reshape(y, &shape)
    }
}

impl Module for AttentionMixer {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.position];
        for l in [&self.query, &self.key, &self.value, &self.output] {
            out.extend(l.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.position];
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.output] {
            out.extend(l.params_mut());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(m: &AttentionMixer, x: &Tensor) -> Tensor {
        let mut tape = Tape::inference();
        let v = tape.constant(x.clone());
        let y = m.forward(&mut tape, v).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn single_token_is_value_then_output_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = AttentionMixer::new("a", 4, 2, 1, &mut rng).unwrap();
        m.position.value = Tensor::zeros(&[1, 4]);
        let x = Tensor::randn(&[2, 1, 4], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let v = m.value.forward(&mut tape, xv).unwrap();
        let expect = m.output.forward(&mut tape, v).unwrap();
        let expect = tape.value(expect).clone();
        assert!(run(&m, &x).rel_linf(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::inference();
        let s = tape.constant(Tensor::randn(&[2, 3, 5, 5], 3.0, &mut rng));
        let p = tape.softmax_last(s).unwrap();
        for row in tape.value(p).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_tokens_and_positions_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = AttentionMixer::new("a", 4, 2, 5, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 5, 4], 1.0, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let permute_rows = |t: &Tensor| {
            Tensor::from_fn(t.shape(), |i| {
                let mut j = i.to_vec();
                let r = j.len() - 2;
                j[r] = perm[i[r]];
                t.get(&j)
            })
        };
        let mut pm = m.clone();
        pm.position.value = permute_rows(&m.position.value);
        let y = run(&m, &x);
        let py = run(&pm, &permute_rows(&x));
        assert!(py.rel_linf(&permute_rows(&y)).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_head_split_and_token_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(AttentionMixer::new("a", 6, 4, 4, &mut rng).is_err());
        let m = AttentionMixer::new("a", 4, 2, 4, &mut rng).unwrap();
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(&[1, 5, 4]));
        assert!(m.forward(&mut tape, x).is_err());
    }
}
