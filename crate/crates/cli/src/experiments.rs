use std::time::Instant;

use hynd_core::backbone::{
    build_plan, evaluate, train_epoch, Adam, AttentionMixer, Block, BlockConfig, Classifier, Dataset, MixerKind,
    ModelConfig, PlanMode, TrainConfig,
};
use hynd_core::filtergen::{FilterShape, FilterVariant, ImplicitFilterSpec, WindowParams};
use hynd_core::hyena::{HyenaConfig, HyenaLayer, HyenaVariant};
use hynd_core::numcore::gradcheck::{check_module, GradCheckOptions, GradCheckReport};
use hynd_core::numcore::{memory_stats, reset_peak, singular_values};
use hynd_core::theorylab::{kernel_rank_report, RankReport};
use hynd_core::{Error, Module, Result, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// kernel fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitVariant {
    Implicit,
    Product,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub variant: FitVariant,
    pub side: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub encoding_width: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(variant: FitVariant, seed: u64) -> Self {
        FitConfig {
            variant,
            side: 8,
            steps: 1000,
            learning_rate: 3e-3,
            encoding_width: 32,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub losses: Vec<f64>,
    pub terminal_mse: f64,
    pub best_rank1_mse: f64,
    pub rank: RankReport,
}

/// Standard normal `side × side` target.
pub fn random_target(side: usize, seed: u64) -> Tensor {
    Tensor::randn(&[side, side], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Mean squared error of the best rank-1 approximation, from the tail of
/// the singular spectrum.
pub fn best_rank1_mse(target: &Tensor) -> Result<f64> {
    let s = singular_values(target)?;
    Ok(s.iter().skip(1).map(|v| v * v).sum::<f64>() / target.len() as f64)
}

fn kernel_mse(spec: &ImplicitFilterSpec, tape: &mut Tape, target: &Tensor) -> Result<(Var, Var)> {
    let side = target.shape()[0];
    let k = spec.build_kernel(tape, &[side, side], 1)?;
    let k = tape.reshape(k, &[side, side])?;
    let t = tape.constant(target.clone());
    let d = tape.sub(k, t)?;
    let sq = tape.mul(d, d)?;
    Ok((k, tape.mean(sq)?))
}

/// Fits a single-channel, unwindowed filter to `target` by Adam on the
/// mean squared error.
pub fn fit_kernel(config: &FitConfig, target: &Tensor) -> Result<FitResult> {
    let side = config.side;
    if target.shape() != [side, side] {
        return Err(Error::Shape(format!(
            "target {:?} is not {side}×{side}",
            target.shape()
        )));
    }
    let variant = match config.variant {
        FitVariant::Implicit => FilterVariant::ImplicitNd,
        FitVariant::Product => FilterVariant::ProductNd,
    };
    let mut shape = FilterShape::new(variant, 2, 1, 1);
    shape.encoding_width = config.encoding_width;
    shape.max_frequency = (side as f64 / 2.0).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut spec = ImplicitFilterSpec::new(&shape, WindowParams::none(1)?, "fit", &mut rng)?;
    let mut adam = Adam::new(&TrainConfig {
        learning_rate: config.learning_rate,
        ..TrainConfig::default()
    });
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let (_, loss) = kernel_mse(&spec, &mut tape, target)?;
        losses.push(tape.value(loss).data()[0]);
        let grads = tape.backward(loss)?;
        let g = tape.param_gradients(&grads, &spec.params());
        drop(tape);
        adam.step(spec.params_mut(), &g);
    }
    let mut tape = Tape::inference();
    let (k, loss) = kernel_mse(&spec, &mut tape, target)?;
    Ok(FitResult {
        losses,
        terminal_mse: tape.value(loss).data()[0],
        best_rank1_mse: best_rank1_mse(target)?,
        rank: kernel_rank_report(tape.value(k))?,
    })
}

// ---------------------------------------------------------------------------
// block benchmarks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub channels: usize,
    pub heads: usize,
    pub order: usize,
    pub encoding_width: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            channels: 8,
            heads: 2,
            order: 2,
            encoding_width: 16,
            batch: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemRow {
    pub tokens: usize,
    pub mixer: MixerKind,
    pub peak_bytes: u64,
    pub live_bytes: u64,
    pub param_count: usize,
}

fn grid_side(tokens: usize) -> Result<usize> {
    let side = (tokens as f64).sqrt().round() as usize;
    if side == 0 || side * side != tokens {
        return Err(Error::InvalidArgument(format!(
            "{tokens} tokens do not form a square grid"
        )));
    }
    Ok(side)
}

fn bench_block(kind: MixerKind, side: usize, cfg: &BenchConfig) -> Result<Block> {
    let mut bc = BlockConfig::new(cfg.channels, [side, side]);
    bc.heads = cfg.heads;
    bc.hyena_order = cfg.order;
    bc.encoding_width = cfg.encoding_width;
    Block::new("bench", kind, &bc, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

fn forward_backward(block: &Block, x: &Tensor) -> Result<()> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, xv)?;
    let loss = tape.mean(y)?;
    tape.backward(loss)?;
    Ok(())
}

/// Peak bytes held above the pre-run baseline during one forward and
/// backward pass of a single block, and the bytes still live afterwards.
pub fn bench_memory(kind: MixerKind, tokens: usize, cfg: &BenchConfig) -> Result<MemRow> {
    let side = grid_side(tokens)?;
    let block = bench_block(kind, side, cfg)?;
    let x = Tensor::randn(
        &[cfg.batch, side, side, cfg.channels],
        1.0,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 1),
    );
    let baseline = memory_stats().live_bytes;
    reset_peak();
    forward_backward(&block, &x)?;
    let after = memory_stats();
    Ok(MemRow {
        tokens,
        mixer: kind,
        peak_bytes: after.peak_bytes - baseline,
        live_bytes: after.live_bytes.saturating_sub(baseline),
        param_count: block.param_count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeRow {
    pub tokens: usize,
    pub mixer: MixerKind,
    pub median_seconds: f64,
}

/// Median wall-clock seconds of a forward and backward pass.
pub fn bench_time(kind: MixerKind, tokens: usize, cfg: &BenchConfig, warmup: usize, reps: usize) -> Result<TimeRow> {
    let side = grid_side(tokens)?;
    let block = bench_block(kind, side, cfg)?;
    let x = Tensor::randn(
        &[cfg.batch, side, side, cfg.channels],
        1.0,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 1),
    );
    for _ in 0..warmup {
        forward_backward(&block, &x)?;
    }
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        forward_backward(&block, &x)?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(TimeRow {
        tokens,
        mixer: kind,
        median_seconds: times[times.len() / 2],
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    cov / var
}

// ---------------------------------------------------------------------------
// gradient checks
// ---------------------------------------------------------------------------

/// Gradient reports for every parameter of the standard component set:
/// the three Hyena variants, the attention mixer and one Hyena block, on a
/// `C = 4`, 8×8, order-2 configuration.
pub fn gradient_suite(opts: GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let (c, side, order) = (4, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let u = Tensor::randn(&[1, side, side, c], 1.0, &mut rng);
    let probe = Tensor::randn(&[1, side, side, c], 1.0, &mut rng);
    let loss = |tape: &mut Tape, y: Var| -> Result<Var> {
        let r = tape.constant(probe.clone());
        let p = tape.mul(y, r)?;
        tape.sum(p)
    };
    let mut reports = Vec::new();
    let mut tag = |label: &str, rs: Vec<GradCheckReport>| {
        reports.extend(rs.into_iter().map(|mut r| {
            r.name = format!("{label}/{}", r.name);
            r
        }))
    };

    for (label, variant) in [
        ("hyena_1d", HyenaVariant::Hyena1d),
        ("hyena_2d", HyenaVariant::HyenaNd),
        ("hyena_2d_product", HyenaVariant::HyenaNdProduct),
    ] {
        let mut cfg = HyenaConfig::new(variant, 2, c, order);
        cfg.encoding_width = 16;
        cfg.reference_length = side;
        let layer = HyenaLayer::new(cfg, label, &mut rng)?;
        let rs = check_module(
            &layer,
            |l: &HyenaLayer, tape: &mut Tape| {
                let x = tape.constant(u.clone());
                let y = l.forward(tape, x)?;
                loss(tape, y)
            },
            opts,
        )?;
        tag(label, rs);
    }

    let attn = AttentionMixer::new("attention", c, 2, side * side, &mut rng)?;
    let rs = check_module(
        &attn,
        |m: &AttentionMixer, tape: &mut Tape| {
            let x = tape.constant(u.clone());
            let y = m.forward(tape, x)?;
            loss(tape, y)
        },
        opts,
    )?;
    tag("attention", rs);

    let mut bc = BlockConfig::new(c, [side, side]);
    bc.heads = 2;
    bc.hyena_order = order;
    bc.encoding_width = 16;
    let block = Block::new("block", MixerKind::Hyena2d, &bc, &mut rng)?;
    let rs = check_module(
        &block,
        |b: &Block, tape: &mut Tape| {
            let x = tape.constant(u.clone());
            let y = b.forward(tape, x)?;
            loss(tape, y)
        },
        opts,
    )?;
    tag("block", rs);
    Ok(reports)
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeConfig {
    pub depth: usize,
    pub mode: PlanMode,
    pub hyena_kind: MixerKind,
    pub channels: usize,
    pub heads: usize,
    pub patch: usize,
    pub train: TrainConfig,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        SmokeConfig {
            depth: 4,
            mode: PlanMode::HyenaFirst,
            hyena_kind: MixerKind::Hyena2d,
            channels: 64,
            heads: 4,
            patch: 4,
            train: TrainConfig {
                steps: 300,
                batch_size: 16,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmokeResult {
    pub losses: Vec<f64>,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub seconds: f64,
    pub model: Classifier,
}

/// Builds a classifier for `data` and trains it for `train.steps` updates.
pub fn smoke_train(config: &SmokeConfig, data: &Dataset) -> Result<SmokeResult> {
    let start = Instant::now();
    let plan = build_plan(config.depth, config.mode, config.hyena_kind)?;
    let mut mc = ModelConfig::new(plan);
    mc.image_size = data.images().shape()[1];
    mc.in_channels = data.images().shape()[3];
    mc.patch = config.patch;
    mc.channels = config.channels;
    mc.heads = config.heads;
    mc.classes = data.classes();
    let mut model = Classifier::new(mc, &mut ChaCha8Rng::seed_from_u64(config.train.seed))?;
    let losses = train_epoch(&mut model, data, &config.train)?;
    let (train_loss, train_accuracy) = evaluate(&model, data, config.train.batch_size)?;
    Ok(SmokeResult {
        losses,
        train_loss,
        train_accuracy,
        seconds: start.elapsed().as_secs_f64(),
        model,
    })
}
