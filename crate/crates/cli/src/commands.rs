use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hynd_core::backbone::{save_checkpoint, MixerKind, PlanMode, TrainConfig};
use hynd_core::numcore::gradcheck::GradCheckOptions;
use hynd_core::theorylab::verify_theory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{load_cifar, synth_dataset};
use crate::error::{CliError, CliResult};
use crate::experiments::{
    bench_memory, bench_time, fit_kernel, gradient_suite, log_log_slope, random_target, smoke_train, BenchConfig,
    FitConfig, FitVariant, SmokeConfig,
};
use crate::report::{
    write_csv, write_svg, Chart, Series, BENCH_MEM, BENCH_TIME, FIT_KERNEL, GRADCHECK, LOSS_TRACE, TRAIN_SUMMARY,
    VERIFY_THEORY,
};

#[derive(Debug, Parser)]
#[command(name = "hynd", version, about = "Experiments with multi-axis Hyena token mixers")]
pub struct Cli {
    /// Seed for every random draw; falls back to HYND_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON document with default values for any flag of the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV, SVG and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference gradient checks of every mixer and a full block.
    Gradcheck(GradcheckArgs),
    /// Exhaustive checks of the identity-tensor threshold construction.
    VerifyTheory(TheoryArgs),
    /// Fit a random target kernel with the implicit and product filters.
    FitKernel(FitArgs),
    /// Peak activation memory of one block across token counts.
    BenchMem(MemArgs),
    /// Median forward-and-backward time of one block across token counts.
    BenchTime(TimeArgs),
    /// Train a small classifier on CIFAR binaries or synthetic stripes.
    Train(TrainArgs),
}

macro_rules! mergeable {
    ($(#[$meta:meta])* struct $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, Args, Deserialize)]
        #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
        struct $name {
            $($(#[$fmeta])* #[arg(long)] $field: Option<$ty>,)*
        }

        impl $name {
            /// Flags win over the config document.
            fn merge(self, doc: Self) -> Self {
                $name { $($field: self.$field.or(doc.$field),)* }
            }
        }
    };
}

mergeable! {
    struct GradcheckArgs {
        /// Largest accepted relative error.
        tol: f64,
        /// Central-difference step.
        step: f64,
        /// Entries probed per parameter tensor.
        max_entries: usize,
    }
}

mergeable! {
    struct TheoryArgs {
        /// Number of axes.
        n: usize,
        /// Side length of the identity tensor.
        r: usize,
    }
}

mergeable! {
    struct FitArgs {
        /// implicit, product or both.
        variant: String,
        side: usize,
        steps: usize,
        lr: f64,
        encoding_width: usize,
        /// Seed of the random target; defaults to the run seed.
        target_seed: u64,
        /// Largest accepted terminal error of the implicit filter.
        tol: f64,
    }
}

mergeable! {
    struct MemArgs {
        /// Comma-separated square token counts.
        #[arg(value_delimiter = ',')]
        tokens: Vec<usize>,
        /// Comma-separated mixers: attention, hyena_1d, hyena_2d, hyena_2d_product.
        #[arg(value_delimiter = ',')]
        mixer: Vec<String>,
        channels: usize,
        heads: usize,
        order: usize,
        batch: usize,
        encoding_width: usize,
    }
}

mergeable! {
    struct TimeArgs {
        #[arg(value_delimiter = ',')]
        tokens: Vec<usize>,
        #[arg(value_delimiter = ',')]
        mixer: Vec<String>,
        channels: usize,
        heads: usize,
        order: usize,
        batch: usize,
        encoding_width: usize,
        warmup: usize,
        reps: usize,
    }
}

mergeable! {
    struct TrainArgs {
        /// `synthetic` or the path of a CIFAR-10 binary batch file.
        data: String,
        /// Load at most this many CIFAR records.
        limit: usize,
        /// Synthetic sample count.
        samples: usize,
        /// Synthetic class count.
        classes: usize,
        depth: usize,
        /// attention_only, hyena_only, hyena_first, attention_first or alternate.
        plan: String,
        hyena_kind: String,
        channels: usize,
        heads: usize,
        patch: usize,
        steps: usize,
        batch_size: usize,
        lr: f64,
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    out: String,
    config: &'a T,
}

struct Run {
    seed: u64,
    out: PathBuf,
}

impl Run {
    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn manifest<T: Serialize>(&self, command: &str, config: &T) -> CliResult<()> {
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            out: self.out.display().to_string(),
            config,
        };
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

fn read_doc(path: Option<&Path>) -> CliResult<serde_json::Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Default::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match serde_json::from_str(&text)? {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Usage(format!("{} must hold a JSON object", path.display()))),
    }
}

fn doc_args<T: DeserializeOwned>(doc: serde_json::Map<String, Value>) -> CliResult<T> {
    Ok(serde_json::from_value(Value::Object(doc))?)
}

fn parse_mixers(names: &[String]) -> CliResult<Vec<MixerKind>> {
    names
        .iter()
        .map(|n| n.parse().map_err(|e: hynd_core::Error| CliError::Usage(e.to_string())))
        .collect()
}

fn positive(name: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be positive")));
    }
    Ok(v)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut doc = read_doc(cli.config.as_deref())?;
    let doc_seed = doc.remove("seed").map(serde_json::from_value::<u64>).transpose()?;
    let doc_out = doc.remove("out").map(serde_json::from_value::<PathBuf>).transpose()?;
    let env_seed = match std::env::var("HYND_SEED") {
        Ok(s) => Some(
            s.parse::<u64>()
                .map_err(|_| CliError::Usage(format!("HYND_SEED='{s}' is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    let seed = cli.seed.or(doc_seed).or(env_seed).unwrap_or(0);
    let name = match &cli.command {
        Command::Gradcheck(_) => "gradcheck",
        Command::VerifyTheory(_) => "verify-theory",
        Command::FitKernel(_) => "fit-kernel",
        Command::BenchMem(_) => "bench-mem",
        Command::BenchTime(_) => "bench-time",
        Command::Train(_) => "train",
    };
    let out = cli.out.or(doc_out).unwrap_or_else(|| PathBuf::from("runs").join(name));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let run = Run { seed, out };
    match cli.command {
        Command::Gradcheck(a) => gradcheck(&run, a.merge(doc_args(doc)?)),
        Command::VerifyTheory(a) => theory(&run, a.merge(doc_args(doc)?)),
        Command::FitKernel(a) => fit(&run, a.merge(doc_args(doc)?)),
        Command::BenchMem(a) => bench_mem(&run, a.merge(doc_args(doc)?)),
        Command::BenchTime(a) => bench_time_cmd(&run, a.merge(doc_args(doc)?)),
        Command::Train(a) => train(&run, a.merge(doc_args(doc)?)),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[derive(Debug, Serialize)]
struct GradcheckConfig {
    tol: f64,
    step: f64,
    max_entries: usize,
}

fn gradcheck(run: &Run, a: GradcheckArgs) -> CliResult<()> {
    let cfg = GradcheckConfig {
        tol: a.tol.unwrap_or(1e-4),
        step: a.step.unwrap_or(1e-5),
        max_entries: positive("max-entries", a.max_entries.unwrap_or(24))?,
    };
    run.manifest("gradcheck", &cfg)?;
    let reports = gradient_suite(GradCheckOptions {
        step: cfg.step,
        max_entries: cfg.max_entries,
        seed: run.seed,
    })?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for r in &reports {
        let ok = r.passes(cfg.tol);
        failed += usize::from(!ok);
        println!(
            "{} {} checked={} rel_error={:.3e}",
            verdict(ok),
            r.name,
            r.checked,
            r.rel_error
        );
        rows.push(vec![
            r.name.clone(),
            r.checked.to_string(),
            format!("{:e}", r.rel_error),
            ok.to_string(),
        ]);
    }
    write_csv(&run.path("gradcheck.csv"), &GRADCHECK, &rows)?;
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} parameters",
            reports.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TheoryConfig {
    n: usize,
    r: usize,
}

fn theory(run: &Run, a: TheoryArgs) -> CliResult<()> {
    let cfg = TheoryConfig {
        n: a.n.unwrap_or(2),
        r: a.r.unwrap_or(8),
    };
    if cfg.n < 2 || cfg.r < 2 {
        return Err(CliError::Usage("--n and --r must be at least 2".into()));
    }
    run.manifest("verify-theory", &cfg)?;
    let cases = verify_theory(cfg.n, cfg.r)?;
    let mut rows = Vec::new();
    for c in &cases {
        println!("{c}");
        rows.push(vec![
            c.axes.to_string(),
            c.length.to_string(),
            c.rank.to_string(),
            c.pattern_exact.to_string(),
            c.measured_rank.to_string(),
            c.passed().to_string(),
        ]);
    }
    write_csv(&run.path("verify_theory.csv"), &VERIFY_THEORY, &rows)?;
    let failed = cases.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} of {} cases", cases.len())));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitRunConfig {
    variants: Vec<String>,
    side: usize,
    steps: usize,
    lr: f64,
    encoding_width: usize,
    target_seed: u64,
    tol: f64,
}

fn fit(run: &Run, a: FitArgs) -> CliResult<()> {
    let variants = match a.variant.as_deref().unwrap_or("both") {
        "implicit" => vec![FitVariant::Implicit],
        "product" => vec![FitVariant::Product],
        "both" => vec![FitVariant::Implicit, FitVariant::Product],
        other => return Err(CliError::Usage(format!("unknown fit variant '{other}'"))),
    };
    let cfg = FitRunConfig {
        variants: variants.iter().map(|v| format!("{v:?}").to_lowercase()).collect(),
        side: positive("side", a.side.unwrap_or(8))?,
        steps: a.steps.unwrap_or(1000),
        lr: a.lr.unwrap_or(3e-3),
        encoding_width: positive("encoding-width", a.encoding_width.unwrap_or(32))?,
        target_seed: a.target_seed.unwrap_or(run.seed),
        tol: a.tol.unwrap_or(1e-3),
    };
    run.manifest("fit-kernel", &cfg)?;
    let target = random_target(cfg.side, cfg.target_seed);
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut series = Vec::new();
    let mut failed = 0;
    for (&variant, label) in variants.iter().zip(&cfg.variants) {
        let fc = FitConfig {
            variant,
            side: cfg.side,
            steps: cfg.steps,
            learning_rate: cfg.lr,
            encoding_width: cfg.encoding_width,
            seed: run.seed,
        };
        let r = fit_kernel(&fc, &target)?;
        let ok = match variant {
            FitVariant::Implicit => r.terminal_mse <= cfg.tol,
            FitVariant::Product => r.terminal_mse >= r.best_rank1_mse,
        };
        failed += usize::from(!ok);
        let rank = r.rank.exact_rank_2d.unwrap_or(0);
        println!(
            "{} {label} terminal_mse={:.3e} best_rank1_mse={:.3e} rank={rank}",
            verdict(ok),
            r.terminal_mse,
            r.best_rank1_mse
        );
        rows.push(vec![
            label.clone(),
            format!("{:e}", r.terminal_mse),
            format!("{:e}", r.best_rank1_mse),
            rank.to_string(),
            ok.to_string(),
        ]);
        for (i, l) in r.losses.iter().enumerate() {
            trace.push(vec![i.to_string(), label.clone(), format!("{l:e}")]);
        }
        series.push(Series {
            name: label.clone(),
            points: r.losses.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect(),
        });
    }
    write_csv(&run.path("fit_kernel.csv"), &FIT_KERNEL, &rows)?;
    write_csv(&run.path("fit_kernel_trace.csv"), &LOSS_TRACE, &trace)?;
    write_svg(
        &run.path("fit_kernel.svg"),
        &Chart {
            title: format!("Kernel fit, {0}×{0} random target", cfg.side),
            x_label: "step".into(),
            y_label: "mean squared error".into(),
            log_x: false,
            log_y: true,
            series,
        },
    )?;
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} fit checks")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchRunConfig {
    tokens: Vec<usize>,
    mixers: Vec<String>,
    channels: usize,
    heads: usize,
    order: usize,
    batch: usize,
    encoding_width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    warmup: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reps: Option<usize>,
}

impl BenchRunConfig {
    fn bench(&self, seed: u64) -> BenchConfig {
        BenchConfig {
            channels: self.channels,
            heads: self.heads,
            order: self.order,
            encoding_width: self.encoding_width,
            batch: self.batch,
            seed,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bench_config(
    tokens: Option<Vec<usize>>,
    mixer: Option<Vec<String>>,
    default_tokens: &[usize],
    channels: Option<usize>,
    heads: Option<usize>,
    order: Option<usize>,
    batch: Option<usize>,
    encoding_width: Option<usize>,
) -> CliResult<(BenchRunConfig, Vec<MixerKind>)> {
    let mixer = mixer.unwrap_or_else(|| vec!["attention".into(), "hyena_2d".into()]);
    let kinds = parse_mixers(&mixer)?;
    let d = BenchConfig::default();
    let cfg = BenchRunConfig {
        tokens: tokens.unwrap_or_else(|| default_tokens.to_vec()),
        mixers: kinds.iter().map(ToString::to_string).collect(),
        channels: positive("channels", channels.unwrap_or(d.channels))?,
        heads: positive("heads", heads.unwrap_or(d.heads))?,
        order: positive("order", order.unwrap_or(d.order))?,
        batch: positive("batch", batch.unwrap_or(d.batch))?,
        encoding_width: positive("encoding-width", encoding_width.unwrap_or(d.encoding_width))?,
        warmup: None,
        reps: None,
    };
    if cfg.tokens.is_empty() || kinds.is_empty() {
        return Err(CliError::Usage("need at least one token count and mixer".into()));
    }
    Ok((cfg, kinds))
}

fn bench_chart(title: &str, y_label: &str, series: Vec<Series>) -> Chart {
    Chart {
        title: title.into(),
        x_label: "tokens".into(),
        y_label: y_label.into(),
        log_x: true,
        log_y: true,
        series,
    }
}

fn bench_mem(run: &Run, a: MemArgs) -> CliResult<()> {
    let (cfg, kinds) = bench_config(
        a.tokens,
        a.mixer,
        &[64, 256, 1024, 4096],
        a.channels,
        a.heads,
        a.order,
        a.batch,
        a.encoding_width,
    )?;
    run.manifest("bench-mem", &cfg)?;
    let bench = cfg.bench(run.seed);
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &kind in &kinds {
        let mut points = Vec::new();
        for &t in &cfg.tokens {
            let r = bench_memory(kind, t, &bench)?;
            println!(
                "{kind} tokens={t} peak_bytes={} live_bytes={}",
                r.peak_bytes, r.live_bytes
            );
            points.push((t as f64, r.peak_bytes as f64));
            rows.push(vec![
                t.to_string(),
                kind.to_string(),
                r.peak_bytes.to_string(),
                r.live_bytes.to_string(),
                r.param_count.to_string(),
            ]);
        }
        if points.len() > 1 {
            println!("{kind} log-log slope {:.3}", log_log_slope(&points));
        }
        series.push(Series {
            name: kind.to_string(),
            points,
        });
    }
    write_csv(&run.path("bench_mem.csv"), &BENCH_MEM, &rows)?;
    write_svg(
        &run.path("bench_mem.svg"),
        &bench_chart("Peak activation memory per block", "bytes", series),
    )
}

fn bench_time_cmd(run: &Run, a: TimeArgs) -> CliResult<()> {
    let (mut cfg, kinds) = bench_config(
        a.tokens,
        a.mixer,
        &[64, 256, 1024],
        a.channels,
        a.heads,
        a.order,
        a.batch,
        a.encoding_width,
    )?;
    let warmup = a.warmup.unwrap_or(2);
    let reps = positive("reps", a.reps.unwrap_or(5))?;
    cfg.warmup = Some(warmup);
    cfg.reps = Some(reps);
    run.manifest("bench-time", &cfg)?;
    let bench = cfg.bench(run.seed);
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &kind in &kinds {
        let mut points = Vec::new();
        for &t in &cfg.tokens {
            let r = bench_time(kind, t, &bench, warmup, reps)?;
            println!("{kind} tokens={t} median_seconds={:.6}", r.median_seconds);
            points.push((t as f64, r.median_seconds));
            rows.push(vec![t.to_string(), kind.to_string(), format!("{:e}", r.median_seconds)]);
        }
        series.push(Series {
            name: kind.to_string(),
            points,
        });
    }
    write_csv(&run.path("bench_time.csv"), &BENCH_TIME, &rows)?;
    write_svg(
        &run.path("bench_time.svg"),
        &bench_chart("Forward and backward time per block", "seconds", series),
    )
}

#[derive(Debug, Serialize)]
struct TrainRunConfig {
    data: String,
    limit: Option<usize>,
    samples: usize,
    classes: usize,
    depth: usize,
    plan: String,
    hyena_kind: String,
    channels: usize,
    heads: usize,
    patch: usize,
    steps: usize,
    batch_size: usize,
    lr: f64,
}

fn train(run: &Run, a: TrainArgs) -> CliResult<()> {
    let d = SmokeConfig::default();
    let cfg = TrainRunConfig {
        data: a.data.unwrap_or_else(|| "synthetic".into()),
        limit: a.limit,
        samples: positive("samples", a.samples.unwrap_or(64))?,
        classes: a.classes.unwrap_or(10),
        depth: positive("depth", a.depth.unwrap_or(d.depth))?,
        plan: a.plan.unwrap_or_else(|| "hyena_first".into()),
        hyena_kind: a.hyena_kind.unwrap_or_else(|| d.hyena_kind.to_string()),
        channels: positive("channels", a.channels.unwrap_or(d.channels))?,
        heads: positive("heads", a.heads.unwrap_or(d.heads))?,
        patch: positive("patch", a.patch.unwrap_or(d.patch))?,
        steps: a.steps.unwrap_or(d.train.steps),
        batch_size: positive("batch-size", a.batch_size.unwrap_or(d.train.batch_size))?,
        lr: a.lr.unwrap_or(d.train.learning_rate),
    };
    let usage = |e: hynd_core::Error| CliError::Usage(e.to_string());
    let mode: PlanMode = cfg.plan.parse().map_err(usage)?;
    let hyena_kind: MixerKind = cfg.hyena_kind.parse().map_err(usage)?;
    run.manifest("train", &cfg)?;
    let data = if cfg.data == "synthetic" {
        synth_dataset(run.seed, cfg.samples, cfg.classes).map_err(usage)?
    } else {
        let path = Path::new(&cfg.data);
        load_cifar(path, cfg.limit).map_err(|e| match e {
            hynd_core::Error::Io(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            e => usage(e),
        })?
    };
    let smoke = SmokeConfig {
        depth: cfg.depth,
        mode,
        hyena_kind,
        channels: cfg.channels,
        heads: cfg.heads,
        patch: cfg.patch,
        train: TrainConfig {
            learning_rate: cfg.lr,
            batch_size: cfg.batch_size,
            steps: cfg.steps,
            seed: run.seed,
            ..TrainConfig::default()
        },
    };
    let r = smoke_train(&smoke, &data)?;
    let trace: Vec<Vec<String>> = r
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), "train".into(), format!("{l:e}")])
        .collect();
    write_csv(&run.path("train_loss.csv"), &LOSS_TRACE, &trace)?;
    let final_loss = r.losses.last().copied().unwrap_or(f64::NAN);
    write_csv(
        &run.path("train_summary.csv"),
        &TRAIN_SUMMARY,
        &[vec![
            data.len().to_string(),
            cfg.steps.to_string(),
            format!("{final_loss:e}"),
            format!("{:e}", r.train_loss),
            format!("{:.4}", r.train_accuracy),
            format!("{:.2}", r.seconds),
        ]],
    )?;
    write_svg(
        &run.path("train_loss.svg"),
        &Chart {
            title: "Training loss".into(),
            x_label: "step".into(),
            y_label: "cross-entropy".into(),
            log_x: false,
            log_y: true,
            series: vec![Series {
                name: format!("{} / {}", cfg.plan, cfg.hyena_kind),
                points: r.losses.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect(),
            }],
        },
    )?;
    save_checkpoint(&r.model, &run.path("model.ckpt"))?;
    println!(
        "samples={} steps={} train_loss={:.4} train_accuracy={:.4} seconds={:.1}",
        data.len(),
        cfg.steps,
        r.train_loss,
        r.train_accuracy,
        r.seconds
    );
    Ok(())
}
