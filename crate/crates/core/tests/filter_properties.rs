use hynd_core::filtergen::{
    build_kernel, decay_schedule, default_rate_range, window_eval, FilterShape, FilterVariant, ImplicitFilterSpec,
    PositionalEncoder, WindowParams, WindowVariant,
};
use hynd_core::numcore::{matrix_rank, unfold};
use hynd_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(variant: FilterVariant, axes: usize, channels: usize, seed: u64) -> ImplicitFilterSpec {
    let mut shape = FilterShape::new(variant, axes, channels, 1);
    shape.encoding_width = 8;
    let window = WindowParams::none(channels).unwrap();
    ImplicitFilterSpec::new(&shape, window, "f", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn channel_slice(k: &Tensor, c: usize, dims: &[usize]) -> Tensor {
    let per: usize = dims.iter().product();
    Tensor::from_vec(dims.to_vec(), k.data()[c * per..(c + 1) * per].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn product_kernels_are_rank_one_in_every_unfolding(
        seed in any::<u64>(),
        dims in prop::collection::vec(2usize..=7, 2..=3),
    ) {
        let s = spec(FilterVariant::ProductNd, dims.len(), 3, seed);
        let k = build_kernel(&s, &dims, 1).unwrap();
        for c in 0..3 {
            let slice = channel_slice(&k, c, &dims);
            for axis in 0..dims.len() {
                prop_assert_eq!(matrix_rank(&unfold(&slice, axis).unwrap(), 1e-8).unwrap(), 1);
            }
        }
    }

    #[test]
    fn window_decays_along_each_axis(
        alpha in 0.0f64..2.0,
        beta in 0.0f64..2.0,
        i in 0usize..20,
        j in 0usize..20,
    ) {
        for variant in [WindowVariant::Symmetric, WindowVariant::Dimensional] {
            let w = WindowParams::new(variant, &[alpha], &[beta], 0.01, false).unwrap();
            let here = window_eval(&[i, j], 0, &w).unwrap();
            prop_assert!(window_eval(&[i + 1, j], 0, &w).unwrap() <= here);
            prop_assert!(window_eval(&[i, j + 1], 0, &w).unwrap() <= here);
            prop_assert!((0.01..=1.01).contains(&here));
        }
    }

    #[test]
    fn schedule_stays_inside_its_ranges(channels in 1usize..40, len in 1usize..200, seed in any::<u64>()) {
        let range = default_rate_range(len);
        let (alpha, beta) = decay_schedule(channels, range, range, seed).unwrap();
        prop_assert_eq!(alpha.len(), channels);
        prop_assert!(alpha.windows(2).all(|p| p[0] <= p[1]));
        let mut sorted = beta.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted, alpha.clone());
        prop_assert!(alpha.iter().all(|&a| a >= range.0 && a <= range.1));
    }

    #[test]
    fn encoding_is_bounded_and_periodic(width_half in 1usize..8, len in 2usize..40, i in 0usize..40) {
        let enc = PositionalEncoder::one_dimensional(2 * width_half, len as f64 / 2.0).unwrap();
        let i = i % len;
        let f = enc.encode(&[i], &[len]).unwrap();
        prop_assert_eq!(f.len(), 2 * width_half);
        prop_assert!(f.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        for k in 0..width_half {
            prop_assert!((f[k].powi(2) + f[width_half + k].powi(2) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn implicit_kernels_reach_full_rank() {
    let s = spec(FilterVariant::ImplicitNd, 2, 4, 5);
    let k = build_kernel(&s, &[6, 6], 1).unwrap();
    let best = (0..4)
        .map(|c| matrix_rank(&channel_slice(&k, c, &[6, 6]), 1e-8).unwrap())
        .max()
        .unwrap();
    assert!(best > 1, "implicit filter stuck at rank {best}");
}

#[test]
fn parameter_count_does_not_depend_on_kernel_length() {
    use hynd_core::Module;
    let s = spec(FilterVariant::ImplicitNd, 2, 4, 6);
    let before = s.param_count();
    for side in [4, 16, 32] {
        let k = build_kernel(&s, &[side, side], 1).unwrap();
        assert_eq!(k.shape(), &[4, side, side]);
    }
    assert_eq!(s.param_count(), before);
}

#[test]
fn negative_rates_are_rejected() {
    assert!(WindowParams::new(WindowVariant::Symmetric, &[-0.1], &[0.0], 0.01, false).is_err());
}

#[test]
fn window_arity_is_checked() {
    let w = WindowParams::new(WindowVariant::Dimensional, &[0.1], &[0.2], 0.01, false).unwrap();
    assert!(window_eval(&[1], 0, &w).is_err());
    assert!(window_eval(&[1, 1], 3, &w).is_err());
}
