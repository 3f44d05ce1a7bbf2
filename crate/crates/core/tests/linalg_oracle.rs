use hynd_core::numcore::{matrix_rank, singular_values, unfold};
use hynd_core::Tensor;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn singular_values_agree_with_nalgebra(rows in 1usize..10, cols in 1usize..10, seed in any::<u64>()) {
        let a = Tensor::randn(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let ours = singular_values(&a).unwrap();
        let m = DMatrix::from_row_slice(rows, cols, a.data());
        let mut theirs: Vec<f64> = m.singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        prop_assert_eq!(ours.len(), theirs.len());
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-10 * theirs[0].max(1.0));
        }
    }

    #[test]
    fn rank_of_a_product_of_thin_factors(n in 2usize..10, r in 1usize..10, seed in any::<u64>()) {
        let r = r.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let left = Tensor::randn(&[n, r], 1.0, &mut rng);
        let right = Tensor::randn(&[r, n], 1.0, &mut rng);
        let mut prod = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                prod[i * n + j] = (0..r).map(|k| left.get(&[i, k]) * right.get(&[k, j])).sum();
            }
        }
        let a = Tensor::from_vec(vec![n, n], prod).unwrap();
        prop_assert_eq!(matrix_rank(&a, 1e-8).unwrap(), r);
    }

    #[test]
    fn unfolding_keeps_every_entry(d0 in 1usize..5, d1 in 1usize..5, d2 in 1usize..5, axis in 0usize..3) {
        let t = Tensor::from_fn(&[d0, d1, d2], |ix| (ix[0] * 100 + ix[1] * 10 + ix[2]) as f64);
        let u = unfold(&t, axis).unwrap();
        let dims = [d0, d1, d2];
        prop_assert_eq!(u.shape(), &[dims[axis], d0 * d1 * d2 / dims[axis]]);
        let mut a: Vec<f64> = u.to_vec();
        let mut b: Vec<f64> = t.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        for row in 0..dims[axis] {
            let width = u.shape()[1];
            for col in 0..width {
                let v = u.get(&[row, col]) as usize;
                let digit = [v / 100, (v / 10) % 10, v % 10][axis];
                prop_assert_eq!(digit, row);
            }
        }
    }
}

#[test]
fn zero_matrix_has_rank_zero() {
    assert_eq!(matrix_rank(&Tensor::zeros(&[4, 3]), 1e-8).unwrap(), 0);
}

#[test]
fn identity_has_full_rank() {
    let eye = Tensor::from_fn(&[6, 6], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 });
    assert_eq!(matrix_rank(&eye, 1e-8).unwrap(), 6);
}
