use rand::Rng;

use super::attention::Linear;
use super::block::{Block, BlockConfig, MixerPlan, Norm};
use super::patch::patchify;
use crate::error::{invalid, shape_err, Result};
use crate::hyena::Direction;
use crate::numcore::{Module, Param, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub channels: usize,
    pub heads: usize,
    pub classes: usize,
    pub plan: MixerPlan,
    /// Class-token readout; only valid for attention-only plans.
    pub cls_token: bool,
    pub hyena_order: usize,
    pub direction: Direction,
    pub encoding_width: usize,
}

impl ModelConfig {
    pub fn new(plan: MixerPlan) -> Self {
        ModelConfig {
            image_size: 32,
            in_channels: 3,
            patch: 4,
            channels: 64,
            heads: 4,
            classes: 10,
            plan,
            cls_token: false,
            hyena_order: 2,
            direction: Direction::Causal,
            encoding_width: 32,
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return Err(invalid(format!(
                "patch size {} does not divide image size {}",
                self.patch, self.image_size
            )));
        }
        if self.plan.depth() == 0 || self.classes == 0 || self.channels == 0 {
            return Err(invalid("model needs blocks, classes and channels"));
        }
        if self.cls_token && self.plan.has_hyena() {
            return Err(invalid("class token is only supported for attention-only plans"));
        }
        Ok(())
    }
}

/// Patch embedding, a stack of mixer blocks, final norm, pooling and head.
#[derive(Debug, Clone)]
pub struct Classifier {
    config: ModelConfig,
    pub embed: Linear,
    pub cls: Option<Param>,
    pub blocks: Vec<Block>,
    pub norm: Norm,
    pub head: Linear,
}

impl Classifier {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let g = config.grid();
        let mut bc = BlockConfig::new(c, [g, g]);
        bc.heads = config.heads;
        bc.extra_tokens = usize::from(config.cls_token);
        bc.hyena_order = config.hyena_order;
        bc.direction = config.direction;
        bc.encoding_width = config.encoding_width;
        let blocks = config
            .plan
            .0
            .iter()
            .enumerate()
            .map(|(i, &k)| Block::new(&format!("blocks.{i}"), k, &bc, rng))
            .collect::<Result<Vec<_>>>()?;
        let patch_width = config.patch * config.patch * config.in_channels;
        Ok(Classifier {
            embed: Linear::new("embed", patch_width, c, true, rng),
            cls: config
                .cls_token
                .then(|| Param::new("cls", Tensor::randn(&[1, c], 0.02, rng))),
            blocks,
            norm: Norm::new("norm", c),
            head: Linear::new("head", c, config.classes, true, rng),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Logits `(B, classes)` for images `(B, H, W, c)`.
    pub fn forward(&self, tape: &mut Tape, images: &Tensor) -> Result<Var> {
        let s = images.shape();
        let cfg = &self.config;
        if s.len() != 4 || s[1] != cfg.image_size || s[2] != cfg.image_size || s[3] != cfg.in_channels {
            return Err(shape_err(format!(
                "expected (B, {0}, {0}, {1}) images, got {s:?}",
                cfg.image_size, cfg.in_channels
            )));
        }
        let b = s[0];
        let c = cfg.channels;
        let tokens = cfg.grid() * cfg.grid();
        let patches = tape.constant(patchify(images, cfg.patch)?);
        let mut x = self.embed.forward(tape, patches)?;
        if let Some(cls) = &self.cls {
            let ones = tape.constant(Tensor::full(&[b, 1], 1.0));
            let cls = tape.param(cls);
            let cls = tape.matmul_last(ones, cls)?;
            let flat = tape.reshape(x, &[b, tokens * c])?;
            let joined = tape.concat_last(&[cls, flat])?;
            x = tape.reshape(joined, &[b, tokens + 1, c])?;
        }
        for block in &self.blocks {
            x = block.forward(tape, x)?;
        }
        let x = self.norm.forward(tape, x)?;
        let pooled = if self.cls.is_some() {
            let flat = tape.reshape(x, &[b, (tokens + 1) * c])?;
            tape.slice_last(flat, 0, c)?
        } else {
            let seq = tape.reshape(x, &[b, tokens, c])?;
            tape.mean_axis(seq, 1)?
        };
        self.head.forward(tape, pooled)
    }

    pub fn project_params(&mut self) {
        for b in &mut self.blocks {
            b.project_params();
        }
    }
}

impl Module for Classifier {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.embed.params();
        out.extend(&self.cls);
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.norm.params());
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.embed.params_mut();
        out.extend(&mut self.cls);
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.norm.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    fn state(&self) -> Vec<&Param> {
        self.blocks.iter().flat_map(|b| b.state()).collect()
    }

    fn state_mut(&mut self) -> Vec<&mut Param> {
        self.blocks.iter_mut().flat_map(|b| b.state_mut()).collect()
    }
}

/// Inference-only logits.
pub fn forward_classifier(model: &Classifier, images: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let y = model.forward(&mut tape, images)?;
    Ok(tape.value(y).clone())
}
