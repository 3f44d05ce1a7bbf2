//! End-to-end acceptance checks. Runs without the libtest harness so the
//! criteria execute one after another on an otherwise idle core and their
//! PASS/FAIL lines always reach stdout. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use hynd_cli::data::synth_dataset;
use hynd_cli::experiments::{
    bench_memory, best_rank1_mse, fit_kernel, gradient_suite, log_log_slope, random_target, smoke_train, BenchConfig,
    FitConfig, FitVariant, SmokeConfig,
};
use hynd_core::backbone::{build_plan, MixerKind, PlanMode};
use hynd_core::filtergen::{
    build_kernel, ffn_evaluations, reset_ffn_evaluations, FilterShape, FilterVariant, ImplicitFilterSpec, WindowParams,
};
use hynd_core::hyena::{hyena_forward, Direction, HyenaConfig, HyenaLayer, HyenaVariant};
use hynd_core::numcore::gradcheck::GradCheckOptions;
use hynd_core::numcore::{direct_conv_oracle, fft_conv_causal, matrix_rank};
use hynd_core::theorylab::{build_identity_network, evaluate_network_tensor, identity_tensor, verify_theory};
use hynd_core::{Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn conv_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for pair in 0..200 {
        let spatial: Vec<usize> = if pair % 2 == 0 {
            vec![rng.random_range(1..=64)]
        } else {
            vec![rng.random_range(1..=32), rng.random_range(1..=32)]
        };
        let kernel: Vec<usize> = spatial.iter().map(|&s| rng.random_range(1..=s)).collect();
        let u = Tensor::randn(&spatial, 1.0, &mut rng);
        let h = Tensor::randn(&kernel, 1.0, &mut rng);
        let fast = fft_conv_causal(&u, &h).unwrap();
        let slow = direct_conv_oracle(&u, &h).unwrap();
        worst = worst.max(fast.rel_linf(&slow).unwrap());
    }
    let elapsed = start.elapsed();
    Outcome {
        passed: worst <= 1e-10 && within(elapsed, 10),
        detail: format!("worst rel L-inf {worst:.2e} in {:.1}s", elapsed.as_secs_f64()),
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions {
        step: 1e-5,
        max_entries: 24,
        seed: 3,
    };
    let reports = gradient_suite(opts).unwrap();
    let worst = reports.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passes(1e-4))
        .map(|r| r.name.as_str())
        .collect();
    let labels = ["hyena_1d/", "hyena_2d/", "hyena_2d_product/", "attention/", "block/"];
    let covered = labels.iter().all(|l| reports.iter().any(|r| r.name.starts_with(l)));
    let elapsed = start.elapsed();
    Outcome {
        passed: failing.is_empty() && covered && within(elapsed, 60),
        detail: format!(
            "{} parameters, worst rel error {worst:.2e}, failing {failing:?} in {:.1}s",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn product_rank_one() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let channels = 100;
    let shape = FilterShape::new(FilterVariant::ProductNd, 2, channels, 2);
    let spec = ImplicitFilterSpec::new(&shape, WindowParams::none(channels).unwrap(), "product", &mut rng).unwrap();
    let (h, w) = (12, 9);
    let mut slices = 0;
    let mut bad = 0;
    for step in 1..=2 {
        let k = build_kernel(&spec, &[h, w], step).unwrap();
        for c in 0..channels {
            let slice = Tensor::from_vec(vec![h, w], k.data()[c * h * w..(c + 1) * h * w].to_vec()).unwrap();
            slices += 1;
            if matrix_rank(&slice, 1e-8).unwrap() != 1 {
                bad += 1;
            }
        }
    }
    Outcome {
        passed: bad == 0,
        detail: format!("{slices} slices over {channels} channels, {bad} not rank 1"),
    }
}

fn theory() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut cases = 0;
    for (axes, top) in [(2, 8), (3, 4)] {
        for r in 2..=top {
            let net = build_identity_network(axes, r).unwrap();
            let t = evaluate_network_tensor(&net).unwrap();
            cases += 1;
            if t.data() != identity_tensor(axes, r, r).data() {
                failures.push(format!("identity N={axes} r={r}"));
            }
        }
    }
    for r in 2..=8 {
        for case in verify_theory(2, r).unwrap() {
            cases += 1;
            if !case.passed() {
                failures.push(case.to_string());
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        passed: failures.is_empty() && within(elapsed, 5),
        detail: format!("{cases} cases, failures {failures:?} in {:.2}s", elapsed.as_secs_f64()),
    }
}

fn fit_contest() -> Outcome {
    let start = Instant::now();
    let target = random_target(8, 7);
    let implicit = fit_kernel(&FitConfig::new(FitVariant::Implicit, 1), &target).unwrap();
    let product = fit_kernel(&FitConfig::new(FitVariant::Product, 1), &target).unwrap();
    let floor = best_rank1_mse(&target).unwrap();
    let elapsed = start.elapsed();
    Outcome {
        passed: implicit.terminal_mse <= 1e-3 && product.terminal_mse >= floor && within(elapsed, 120),
        detail: format!(
            "implicit {:.2e}, product {:.6} vs rank-1 floor {floor:.6} in {:.1}s",
            implicit.terminal_mse,
            product.terminal_mse,
            elapsed.as_secs_f64()
        ),
    }
}

fn memory_scaling() -> Outcome {
    let start = Instant::now();
    let cfg = BenchConfig::default();
    let slope = |kind: MixerKind| {
        let points: Vec<(f64, f64)> = [64, 256, 1024, 4096]
            .iter()
            .map(|&t| (t as f64, bench_memory(kind, t, &cfg).unwrap().peak_bytes as f64))
            .collect();
        log_log_slope(&points)
    };
    let attention = slope(MixerKind::Attention);
    let hyena = slope(MixerKind::Hyena2d);
    let elapsed = start.elapsed();
    Outcome {
        passed: attention >= 1.8 && hyena <= 1.2 && within(elapsed, 120),
        detail: format!(
            "slopes attention {attention:.3}, hyena_2d {hyena:.3} in {:.1}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn filter_cost() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut cfg = HyenaConfig::new(HyenaVariant::HyenaNd, 2, 4, 2);
    cfg.encoding_width = 8;
    let layer = HyenaLayer::new(cfg, "cost", &mut rng).unwrap();
    let mut per_token = Vec::new();
    let mut batch_free = true;
    for side in [4, 8, 16] {
        let mut counts = Vec::new();
        for batch in [1, 8] {
            let u = Tensor::randn(&[batch, side, side, 4], 1.0, &mut rng);
            layer.filter().invalidate();
            reset_ffn_evaluations();
            hyena_forward(&layer, &u).unwrap();
            counts.push(ffn_evaluations());
        }
        batch_free &= counts[0] == counts[1];
        per_token.push(counts[0] as f64 / (side * side) as f64);
    }
    let linear = per_token.iter().all(|&p| p == per_token[0]) && per_token[0] > 0.0;
    Outcome {
        passed: linear && batch_free,
        detail: format!("evaluations per token {per_token:?}, batch independent {batch_free}"),
    }
}

fn closed_form(depth: usize, mode: PlanMode, i: usize) -> bool {
    let half = depth.div_ceil(2);
    match mode {
        PlanMode::AttentionOnly => false,
        PlanMode::HyenaOnly => true,
        PlanMode::HyenaFirst => i < half,
        PlanMode::AttentionFirst => i >= depth - half,
        PlanMode::Alternate => i.is_multiple_of(2),
    }
}

fn plans() -> Outcome {
    let modes = [
        PlanMode::AttentionOnly,
        PlanMode::HyenaOnly,
        PlanMode::HyenaFirst,
        PlanMode::AttentionFirst,
        PlanMode::Alternate,
    ];
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for depth in (2..=12).step_by(2) {
        for mode in modes {
            let plan = build_plan(depth, mode, MixerKind::Hyena2d).unwrap();
            let expected: Vec<MixerKind> = (0..depth)
                .map(|i| {
                    if closed_form(depth, mode, i) {
                        MixerKind::Hyena2d
                    } else {
                        MixerKind::Attention
                    }
                })
                .collect();
            checked += 1;
            if plan.0 != expected {
                mismatches.push(format!("{mode:?}@{depth}"));
            }
        }
    }
    Outcome {
        passed: mismatches.is_empty(),
        detail: format!("{checked} plans, mismatches {mismatches:?}"),
    }
}

/// Largest output change at positions that are not coordinate-wise at or
/// after the perturbed one, relative to the output scale.
fn leakage(layer: &HyenaLayer, u: &Tensor, side: usize, c: usize) -> f64 {
    let base = hyena_forward(layer, u).unwrap();
    let scale = base.max_abs();
    let mut worst: f64 = 0.0;
    for pi in 0..side {
        for pj in 0..side {
            let mut v = u.clone();
            for ch in 0..c {
                v.set(&[0, pi, pj, ch], u.get(&[0, pi, pj, ch]) + 1.0);
            }
            let y = hyena_forward(layer, &v).unwrap();
            for qi in 0..side {
                for qj in 0..side {
                    if qi >= pi && qj >= pj {
                        continue;
                    }
                    for ch in 0..c {
                        let d = (y.get(&[0, qi, qj, ch]) - base.get(&[0, qi, qj, ch])).abs();
                        worst = worst.max(d / scale);
                    }
                }
            }
        }
    }
    worst
}

fn directionality() -> Outcome {
    let (side, c) = (8, 4);
    let build = |dir: Direction| {
        let mut cfg = HyenaConfig::new(HyenaVariant::HyenaNd, 2, c, 2).with_direction(dir);
        cfg.encoding_width = 8;
        HyenaLayer::new(cfg, "dir", &mut ChaCha8Rng::seed_from_u64(404)).unwrap()
    };
    let causal = build(Direction::Causal);
    let two = build(Direction::TwoDir);
    let u = Tensor::randn(&[1, side, side, c], 1.0, &mut ChaCha8Rng::seed_from_u64(405));
    let causal_leak = leakage(&causal, &u, side, c);
    let two_leak = leakage(&two, &u, side, c);
    let same_params = causal.param_count() == two.param_count();
    Outcome {
        passed: causal_leak <= 1e-12 && two_leak > 1e-6 && same_params,
        detail: format!(
            "causal leakage {causal_leak:.1e}, two_dir leakage {two_leak:.1e}, params {} vs {}",
            causal.param_count(),
            two.param_count()
        ),
    }
}

fn smoke() -> Outcome {
    let start = Instant::now();
    let data = synth_dataset(0, 64, 10).unwrap();
    let cfg = SmokeConfig::default();
    let first = smoke_train(&cfg, &data).unwrap();
    let second = smoke_train(&cfg, &data).unwrap();
    let deterministic = first.losses == second.losses && first.train_accuracy == second.train_accuracy;
    let elapsed = start.elapsed();
    Outcome {
        passed: first.train_accuracy >= 0.95 && deterministic && first.seconds <= 600.0,
        detail: format!(
            "accuracy {:.3} after {} steps in {:.1}s, repeat identical {deterministic} ({:.1}s total)",
            first.train_accuracy,
            first.losses.len(),
            first.seconds,
            elapsed.as_secs_f64()
        ),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("convolution oracle equivalence", conv_oracle),
        ("gradient suite", gradients),
        ("product filter rank one", product_rank_one),
        ("identity construction and truncation", theory),
        ("expressiveness contest", fit_contest),
        ("memory scaling", memory_scaling),
        ("filter build cost", filter_cost),
        ("hybrid plans", plans),
        ("directionality", directionality),
        ("smoke training", smoke),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Outcome {
            passed: false,
            detail: "panicked".into(),
        });
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {name}: {}", i + 1, outcome.detail);
        if !outcome.passed {
            failed.push(*name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
