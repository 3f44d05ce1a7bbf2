//! Separable multi-axis transforms on top of `rustfft`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Forward and normalized inverse transforms over every axis of a row-major grid.
#[derive(Clone)]
pub struct FftNd {
    shape: Vec<usize>,
    plans: Vec<Arc<AxisPlan>>,
}

impl fmt::Debug for FftNd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftNd").field("shape", &self.shape).finish()
    }
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let plans = shape
            .iter()
            .map(|&n| {
                Arc::new(AxisPlan {
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                })
            })
            .collect();
        FftNd {
            shape: shape.to_vec(),
            plans,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    /// Normalized inverse.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true);
        let scale = 1.0 / self.numel() as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let total = self.numel();
        debug_assert_eq!(buf.len(), total);
        let mut line = Vec::new();
        let mut stride = total;
        for (ax, plan) in self.plans.iter().enumerate() {
            let n = self.shape[ax];
            stride /= n;
            if n == 1 {
                continue;
            }
            let fft = if inverse { &plan.inverse } else { &plan.forward };
            if stride == 1 {
                // Rows are contiguous: rustfft transforms every chunk of `n`.
                fft.process(buf);
                continue;
            }
            line.resize(n, Complex64::new(0.0, 0.0));
            let outer = total / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for k in 0..n {
                        line[k] = buf[base + k * stride];
                    }
                    fft.process(&mut line);
                    for k in 0..n {
                        buf[base + k * stride] = line[k];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    acc + v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64)
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for n in [1usize, 2, 4, 8, 32] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut y = x.clone();
            FftNd::new(&[n]).forward(&mut y);
            let expect = naive_dft(&x);
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn nd_roundtrip() {
        let plan = FftNd::new(&[4, 8]);
        let x: Vec<Complex64> = (0..32).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let mut y = x.clone();
        plan.forward(&mut y);
        plan.inverse(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
