use hynd_core::numcore::{direct_conv_oracle, fft_conv_causal, ConvBackend};
use hynd_core::{Tape, Tensor};
use proptest::prelude::*;

/// Textbook quadrant-causal convolution, written independently of the crate.
fn reference_2d(u: &[f64], (h, w): (usize, usize), k: &[f64], (kh, kw): (usize, usize)) -> Vec<f64> {
    let mut y = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..kh.min(i + 1) {
                for b in 0..kw.min(j + 1) {
                    acc += k[a * kw + b] * u[(i - a) * w + (j - b)];
                }
            }
            y[i * w + j] = acc;
        }
    }
    y
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

type GridPair = ((usize, usize), (usize, usize), Vec<f64>, Vec<f64>);

/// A signal of `(h, w)` and a kernel no longer than it on either axis.
fn grid_pair() -> impl Strategy<Value = GridPair> {
    (1usize..=12, 1usize..=12)
        .prop_flat_map(|(h, w)| (Just((h, w)), 1..=h, 1..=w))
        .prop_flat_map(|((h, w), kh, kw)| (Just((h, w)), Just((kh, kw)), values(h * w), values(kh * kw)))
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_matches_textbook_sum((dims, kdims, u, k) in grid_pair()) {
        let fast = fft_conv_causal(
            &Tensor::from_vec(vec![dims.0, dims.1], u.clone()).unwrap(),
            &Tensor::from_vec(vec![kdims.0, kdims.1], k.clone()).unwrap(),
        ).unwrap();
        let expect = reference_2d(&u, dims, &k, kdims);
        prop_assert!(max_rel(fast.data(), &expect) <= 1e-10);
    }

    #[test]
    fn fft_matches_direct_in_one_dimension(len in 1usize..=64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let klen = rng.random_range(1..=len);
        let u = Tensor::randn(&[len], 1.0, &mut rng);
        let h = Tensor::randn(&[klen], 1.0, &mut rng);
        let err = fft_conv_causal(&u, &h).unwrap().rel_linf(&direct_conv_oracle(&u, &h).unwrap()).unwrap();
        prop_assert!(err <= 1e-10);
    }

    #[test]
    fn convolution_is_linear_in_the_signal(
        (dims, kdims, u, k) in grid_pair(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let v: Vec<f64> = u.iter().rev().copied().collect();
        let t = |d: Vec<f64>| Tensor::from_vec(vec![dims.0, dims.1], d).unwrap();
        let h = Tensor::from_vec(vec![kdims.0, kdims.1], k).unwrap();
        let mixed: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = fft_conv_causal(&t(mixed), &h).unwrap();
        let yu = fft_conv_causal(&t(u), &h).unwrap();
        let yv = fft_conv_causal(&t(v), &h).unwrap();
        let rhs: Vec<f64> = yu.data().iter().zip(yv.data()).map(|(x, y)| a * x + b * y).collect();
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let diff = lhs.data().iter().zip(&rhs).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(diff <= 1e-10 * scale);
    }

    #[test]
    fn outputs_ignore_later_quadrant((dims, kdims, u, k) in grid_pair(), pi in 0usize..12, pj in 0usize..12) {
        let (pi, pj) = (pi % dims.0, pj % dims.1);
        let mut v = u.clone();
        v[pi * dims.1 + pj] += 5.0;
        let t = |d: Vec<f64>| Tensor::from_vec(vec![dims.0, dims.1], d).unwrap();
        let h = Tensor::from_vec(vec![kdims.0, kdims.1], k).unwrap();
        let a = fft_conv_causal(&t(u), &h).unwrap();
        let b = fft_conv_causal(&t(v), &h).unwrap();
        let scale = a.max_abs().max(b.max_abs()).max(1.0);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                if i >= pi && j >= pj {
                    continue;
                }
                prop_assert!((a.get(&[i, j]) - b.get(&[i, j])).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn unit_impulse_kernel_is_identity((dims, _k, u, _v) in grid_pair()) {
        let mut k = vec![0.0; dims.0 * dims.1];
        k[0] = 1.0;
        let y = fft_conv_causal(
            &Tensor::from_vec(vec![dims.0, dims.1], u.clone()).unwrap(),
            &Tensor::from_vec(vec![dims.0, dims.1], k).unwrap(),
        ).unwrap();
        prop_assert!(max_rel(y.data(), &u) <= 1e-12);
    }

    #[test]
    fn batched_depthwise_matches_per_channel(
        b in 1usize..=3,
        c in 1usize..=3,
        len in 1usize..=20,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = Tensor::randn(&[b, len, c], 1.0, &mut rng);
        let h = Tensor::randn(&[c, len], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let (uv, hv) = (tape.constant(u.clone()), tape.constant(h.clone()));
        let y = tape.causal_conv(uv, hv, ConvBackend::Fft).unwrap();
        let y = tape.value(y).clone();
        for bi in 0..b {
            for ch in 0..c {
                let sig: Vec<f64> = (0..len).map(|t| u.get(&[bi, t, ch])).collect();
                let ker: Vec<f64> = (0..len).map(|t| h.get(&[ch, t])).collect();
                let expect = reference_2d(&sig, (1, len), &ker, (1, len));
                let got: Vec<f64> = (0..len).map(|t| y.get(&[bi, t, ch])).collect();
                prop_assert!(max_rel(&got, &expect) <= 1e-10);
            }
        }
    }
}

#[test]
fn longer_kernel_than_signal_is_rejected() {
    let u = Tensor::zeros(&[4]);
    let h = Tensor::zeros(&[5]);
    assert!(fft_conv_causal(&u, &h).is_err());
}

#[test]
fn mismatched_axis_counts_are_rejected() {
    let u = Tensor::zeros(&[4, 4]);
    let h = Tensor::zeros(&[4]);
    assert!(fft_conv_causal(&u, &h).is_err());
}
