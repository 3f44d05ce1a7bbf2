use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::attention::{AttentionMixer, Linear};
use crate::error::{invalid, Error, Result};
use crate::hyena::{Direction, HyenaConfig, HyenaLayer, HyenaVariant};
use crate::numcore::{Module, Param, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixerKind {
    Attention,
    Hyena1d,
    Hyena2d,
    Hyena2dProduct,
}

impl MixerKind {
    pub fn is_hyena(self) -> bool {
        self != MixerKind::Attention
    }

    pub fn hyena_variant(self) -> Option<HyenaVariant> {
        match self {
            MixerKind::Attention => None,
            MixerKind::Hyena1d => Some(HyenaVariant::Hyena1d),
            MixerKind::Hyena2d => Some(HyenaVariant::HyenaNd),
            MixerKind::Hyena2dProduct => Some(HyenaVariant::HyenaNdProduct),
        }
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixerKind::Attention => "attention",
            MixerKind::Hyena1d => "hyena_1d",
            MixerKind::Hyena2d => "hyena_2d",
            MixerKind::Hyena2dProduct => "hyena_2d_product",
        })
    }
}

impl FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(MixerKind::Attention),
            "hyena_1d" => Ok(MixerKind::Hyena1d),
            "hyena_2d" => Ok(MixerKind::Hyena2d),
            "hyena_2d_product" => Ok(MixerKind::Hyena2dProduct),
            _ => Err(invalid(format!("unknown mixer '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    AttentionOnly,
    HyenaOnly,
    HyenaFirst,
    AttentionFirst,
    Alternate,
}

impl FromStr for PlanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention_only" => Ok(PlanMode::AttentionOnly),
            "hyena_only" => Ok(PlanMode::HyenaOnly),
            "hyena_first" => Ok(PlanMode::HyenaFirst),
            "attention_first" => Ok(PlanMode::AttentionFirst),
            "alternate" => Ok(PlanMode::Alternate),
            _ => Err(invalid(format!("unknown plan mode '{s}'"))),
        }
    }
}

/// Mixer kind for each block, input to output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixerPlan(pub Vec<MixerKind>);

impl MixerPlan {
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn has_hyena(&self) -> bool {
        self.0.iter().any(|k| k.is_hyena())
    }
}

pub fn build_plan(depth: usize, mode: PlanMode, hyena_kind: MixerKind) -> Result<MixerPlan> {
    if depth == 0 {
        return Err(invalid("depth must be at least 1"));
    }
    if !hyena_kind.is_hyena() {
        return Err(invalid("hyena kind must name a Hyena mixer"));
    }
    let (h, a) = (hyena_kind, MixerKind::Attention);
    let half = depth.div_ceil(2);
    let kinds = match mode {
        PlanMode::AttentionOnly => vec![a; depth],
        PlanMode::HyenaOnly => vec![h; depth],
        PlanMode::HyenaFirst => (0..depth).map(|i| if i < half { h } else { a }).collect(),
        PlanMode::AttentionFirst => (0..depth).map(|i| if i < depth - half { a } else { h }).collect(),
        PlanMode::Alternate => {
            if !depth.is_multiple_of(2) {
                return Err(invalid(format!("alternating plan needs an even depth, got {depth}")));
            }
            (0..depth).map(|i| if i % 2 == 0 { h } else { a }).collect()
        }
    };
    Ok(MixerPlan(kinds))
}

/// Layer normalization with a learned gain and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gain: Param,
    pub shift: Param,
}

impl Norm {
    pub fn new(name: &str, channels: usize) -> Self {
        Norm {
            gain: Param::new(format!("{name}.gain"), Tensor::full(&[channels], 1.0)),
            shift: Param::new(format!("{name}.shift"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.layer_norm(x, NORM_EPS)?;
        let g = tape.param(&self.gain);
        let y = tape.mul_bias(y, g)?;
        let s = tape.param(&self.shift);
        tape.add_bias(y, s)
    }
}

impl Module for Norm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gain, &self.shift]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.shift]
    }
}

#[derive(Debug, Clone)]
pub enum Mixer {
    Attention(Box<AttentionMixer>),
    Hyena(Box<HyenaLayer>),
}

impl Mixer {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Mixer::Attention(m) => m.forward(tape, x),
            Mixer::Hyena(m) => m.forward(tape, x),
        }
    }
}

impl Module for Mixer {
    fn params(&self) -> Vec<&Param> {
        match self {
            Mixer::Attention(m) => m.params(),
            Mixer::Hyena(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Mixer::Attention(m) => m.params_mut(),
            Mixer::Hyena(m) => m.params_mut(),
        }
    }

    fn state(&self) -> Vec<&Param> {
        match self {
            Mixer::Attention(_) => Vec::new(),
            Mixer::Hyena(m) => m.state(),
        }
    }

    fn state_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Mixer::Attention(_) => Vec::new(),
            Mixer::Hyena(m) => m.state_mut(),
        }
    }
}

/// Settings shared by every block of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub heads: usize,
    pub grid: [usize; 2],
    /// Extra tokens in front of the grid seen by attention (the class token).
    pub extra_tokens: usize,
    pub hyena_order: usize,
    pub direction: Direction,
    pub encoding_width: usize,
    pub mlp_ratio: usize,
}

impl BlockConfig {
    pub fn new(channels: usize, grid: [usize; 2]) -> Self {
        BlockConfig {
            channels,
            heads: 4,
            grid,
            extra_tokens: 0,
            hyena_order: 2,
            direction: Direction::Causal,
            encoding_width: 32,
            mlp_ratio: 4,
        }
    }

    pub fn hyena_config(&self, variant: HyenaVariant) -> HyenaConfig {
        let mut cfg = HyenaConfig::new(variant, 2, self.channels, self.hyena_order).with_direction(self.direction);
        cfg.encoding_width = self.encoding_width;
        cfg.reference_length = self.grid[0].max(self.grid[1]);
        cfg
    }
}

/// Pre-norm residual block: mixer, then a GELU MLP.
#[derive(Debug, Clone)]
pub struct Block {
    kind: MixerKind,
    pub norm1: Norm,
    pub mixer: Mixer,
    pub norm2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new(name: &str, kind: MixerKind, cfg: &BlockConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.channels;
        let mixer = match kind.hyena_variant() {
            None => {
                let tokens = cfg.grid[0] * cfg.grid[1] + cfg.extra_tokens;
                Mixer::Attention(Box::new(AttentionMixer::new(
                    &format!("{name}.attention"),
                    c,
                    cfg.heads,
                    tokens,
                    rng,
                )?))
            }
            Some(v) => {
                if cfg.extra_tokens != 0 {
                    return Err(invalid("Hyena mixers operate on the token grid only"));
                }
                Mixer::Hyena(Box::new(HyenaLayer::new(
                    cfg.hyena_config(v),
                    &format!("{name}.hyena"),
                    rng,
                )?))
            }
        };
        Ok(Block {
            kind,
            norm1: Norm::new(&format!("{name}.norm1"), c),
            mixer,
            norm2: Norm::new(&format!("{name}.norm2"), c),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), c, cfg.mlp_ratio * c, true, rng),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), cfg.mlp_ratio * c, c, true, rng),
        })
    }

    pub fn kind(&self) -> MixerKind {
        self.kind
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.norm1.forward(tape, x)?;
        let h = self.mixer.forward(tape, h)?;
        let x = tape.add(x, h)?;
        let h = self.norm2.forward(tape, x)?;
        let h = self.fc1.forward(tape, h)?;
        let h = tape.gelu(h)?;
        let h = self.fc2.forward(tape, h)?;
        tape.add(x, h)
    }

    /// Re-imposes parameter constraints after an optimizer update.
    pub fn project_params(&mut self) {
        if let Mixer::Hyena(h) = &mut self.mixer {
            h.project_params();
        }
    }
}

impl Module for Block {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.norm1.params();
        out.extend(self.mixer.params());
        out.extend(self.norm2.params());
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.norm1.params_mut();
        out.extend(self.mixer.params_mut());
        out.extend(self.norm2.params_mut());
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    fn state(&self) -> Vec<&Param> {
        self.mixer.state()
    }

    fn state_mut(&mut self) -> Vec<&mut Param> {
        self.mixer.state_mut()
    }
}

/// Runs one block on a concrete `(B, H, W, C)` grid.
pub fn block_forward(block: &Block, tokens: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let x = tape.constant(tokens.clone());
    let y = block.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}
