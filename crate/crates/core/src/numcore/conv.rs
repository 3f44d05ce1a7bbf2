//! Quadrant-causal multi-axis convolution.
//!
//! `y[i] = Σ_{s ≤ i} h[s] · u[i − s]` where `≤` holds on every axis. Batched
//! kernels use a channel-last signal layout `(B, L_1..L_N, C)` and a
//! channel-first kernel layout `(C, K_1..K_N)`.

use num_complex::Complex64;

use super::fft::{next_pow2, FftNd};
use super::memory::Scratch;
use super::tensor::{advance_index, numel, strides, Tensor};
use crate::error::{Error, Result};

/// Which algorithm evaluates a causal convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvBackend {
    /// Zero-padded separable FFT; kernels may not exceed the signal on any axis.
    Fft,
    /// Explicit summation; taps past the signal extent are ignored.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub spatial: Vec<usize>,
    pub channels: usize,
    pub kernel: Vec<usize>,
}

impl ConvGeometry {
    pub fn new(u_shape: &[usize], h_shape: &[usize], backend: ConvBackend) -> Result<Self> {
        if u_shape.len() < 3 {
            return Err(Error::Shape(format!(
                "signal must be (batch, axes.., channels), got {u_shape:?}"
            )));
        }
        let batch = u_shape[0];
        let channels = *u_shape.last().unwrap();
        let spatial = u_shape[1..u_shape.len() - 1].to_vec();
        if h_shape.len() != spatial.len() + 1 {
            return Err(Error::AxisCount {
                signal: spatial.len(),
                kernel: h_shape.len().saturating_sub(1),
            });
        }
        if h_shape[0] != channels {
            return Err(Error::Shape(format!(
                "kernel has {} channels, signal has {channels}",
                h_shape[0]
            )));
        }
        let kernel = h_shape[1..].to_vec();
        if backend == ConvBackend::Fft {
            check_lengths(&spatial, &kernel)?;
        }
        Ok(ConvGeometry {
            batch,
            spatial,
            channels,
            kernel,
        })
    }

    fn padded(&self) -> Vec<usize> {
        self.spatial
            .iter()
            .zip(&self.kernel)
            .map(|(&s, &k)| next_pow2(s + k - 1))
            .collect()
    }

    fn spatial_numel(&self) -> usize {
        numel(&self.spatial)
    }

    fn kernel_numel(&self) -> usize {
        numel(&self.kernel)
    }
}

fn check_lengths(signal: &[usize], kernel: &[usize]) -> Result<()> {
    if signal.len() != kernel.len() {
        return Err(Error::AxisCount {
            signal: signal.len(),
            kernel: kernel.len(),
        });
    }
    for (axis, (&s, &k)) in signal.iter().zip(kernel).enumerate() {
        if k > s {
            return Err(Error::KernelTooLong {
                axis,
                kernel: k,
                signal: s,
            });
        }
    }
    Ok(())
}

/// Flat offsets of a `shape` box embedded in a row-major `outer` grid.
fn embed_offsets(shape: &[usize], outer: &[usize]) -> Vec<usize> {
    let outer_strides = strides(outer);
    let mut idx = vec![0; shape.len()];
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(idx.iter().zip(&outer_strides).map(|(i, s)| i * s).sum());
        advance_index(&mut idx, shape);
    }
    out
}

struct FftWorkspace {
    plan: FftNd,
    signal_map: Vec<usize>,
    kernel_map: Vec<usize>,
}

impl FftWorkspace {
    fn new(geo: &ConvGeometry) -> Self {
        let padded = geo.padded();
        FftWorkspace {
            signal_map: embed_offsets(&geo.spatial, &padded),
            kernel_map: embed_offsets(&geo.kernel, &padded),
            plan: FftNd::new(&padded),
        }
    }

    /// Registers `buffers` spectra worth of scratch with the memory ledger.
    fn scratch(&self, buffers: usize) -> Scratch {
        Scratch::new((buffers * self.plan.numel() * std::mem::size_of::<Complex64>()) as u64)
    }

    fn zeroed(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.plan.numel()]
    }

    fn kernel_spectrum(&self, h: &[f64], geo: &ConvGeometry, c: usize) -> Vec<Complex64> {
        let kn = geo.kernel_numel();
        let mut buf = self.zeroed();
        for (k, &p) in self.kernel_map.iter().enumerate() {
            buf[p] = Complex64::new(h[c * kn + k], 0.0);
        }
        self.plan.forward(&mut buf);
        buf
    }

    fn signal_spectrum(&self, u: &[f64], geo: &ConvGeometry, b: usize, c: usize) -> Vec<Complex64> {
        let sn = geo.spatial_numel();
        let ch = geo.channels;
        let mut buf = self.zeroed();
        for (s, &p) in self.signal_map.iter().enumerate() {
            buf[p] = Complex64::new(u[(b * sn + s) * ch + c], 0.0);
        }
        self.plan.forward(&mut buf);
        buf
    }
}

pub(crate) fn forward_fft(u: &[f64], h: &[f64], geo: &ConvGeometry) -> Vec<f64> {
    let ws = FftWorkspace::new(geo);
    let _scratch = ws.scratch(2);
    let sn = geo.spatial_numel();
    let ch = geo.channels;
    let mut y = vec![0.0; u.len()];
    for c in 0..ch {
        let hs = ws.kernel_spectrum(h, geo, c);
        for b in 0..geo.batch {
            let mut us = ws.signal_spectrum(u, geo, b, c);
            for (x, k) in us.iter_mut().zip(&hs) {
                *x *= k;
            }
            ws.plan.inverse(&mut us);
            for (s, &p) in ws.signal_map.iter().enumerate() {
                y[(b * sn + s) * ch + c] = us[p].re;
            }
        }
    }
    y
}

pub(crate) fn backward_fft(g: &[f64], u: &[f64], h: &[f64], geo: &ConvGeometry) -> (Vec<f64>, Vec<f64>) {
    let ws = FftWorkspace::new(geo);
    let _scratch = ws.scratch(5);
    let sn = geo.spatial_numel();
    let kn = geo.kernel_numel();
    let ch = geo.channels;
    let mut gu = vec![0.0; u.len()];
    let mut gh = vec![0.0; h.len()];
    for c in 0..ch {
        let hs = ws.kernel_spectrum(h, geo, c);
        let mut acc = ws.zeroed();
        for b in 0..geo.batch {
            let gs = ws.signal_spectrum(g, geo, b, c);
            let us = ws.signal_spectrum(u, geo, b, c);
            let mut corr = gs.clone();
            for ((x, k), (a, v)) in corr.iter_mut().zip(&hs).zip(acc.iter_mut().zip(&us)) {
                *a += *x * v.conj();
                *x *= k.conj();
            }
            ws.plan.inverse(&mut corr);
            for (s, &p) in ws.signal_map.iter().enumerate() {
                gu[(b * sn + s) * ch + c] = corr[p].re;
            }
        }
        ws.plan.inverse(&mut acc);
        for (k, &p) in ws.kernel_map.iter().enumerate() {
            gh[c * kn + k] = acc[p].re;
        }
    }
    (gu, gh)
}

/// Kernel taps as (per-axis lag, flat kernel index, flat spatial displacement).
fn taps(geo: &ConvGeometry) -> Vec<(Vec<usize>, usize, usize)> {
    let sstr = strides(&geo.spatial);
    let mut idx = vec![0; geo.kernel.len()];
    let mut out = Vec::new();
    for k in 0..geo.kernel_numel() {
        if idx.iter().zip(&geo.spatial).all(|(i, s)| i < s) {
            let disp = idx.iter().zip(&sstr).map(|(i, s)| i * s).sum();
            out.push((idx.clone(), k, disp));
        }
        advance_index(&mut idx, &geo.kernel);
    }
    out
}

fn for_each_pair(geo: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    // f(output spatial flat, input spatial flat, kernel flat)
    let taps = taps(geo);
    let mut pos = vec![0; geo.spatial.len()];
    for i in 0..geo.spatial_numel() {
        for (lag, k, disp) in &taps {
            if lag.iter().zip(&pos).all(|(l, p)| l <= p) {
                f(i, i - disp, *k);
            }
        }
        advance_index(&mut pos, &geo.spatial);
    }
}

pub(crate) fn forward_direct(u: &[f64], h: &[f64], geo: &ConvGeometry) -> Vec<f64> {
    let sn = geo.spatial_numel();
    let kn = geo.kernel_numel();
    let ch = geo.channels;
    let mut y = vec![0.0; u.len()];
    for_each_pair(geo, |i, j, k| {
        for b in 0..geo.batch {
            let yo = (b * sn + i) * ch;
            let uo = (b * sn + j) * ch;
            for c in 0..ch {
                y[yo + c] += h[c * kn + k] * u[uo + c];
            }
        }
    });
    y
}

pub(crate) fn backward_direct(g: &[f64], u: &[f64], h: &[f64], geo: &ConvGeometry) -> (Vec<f64>, Vec<f64>) {
    let sn = geo.spatial_numel();
    let kn = geo.kernel_numel();
    let ch = geo.channels;
    let mut gu = vec![0.0; u.len()];
    let mut gh = vec![0.0; h.len()];
    for_each_pair(geo, |i, j, k| {
        for b in 0..geo.batch {
            let go = (b * sn + i) * ch;
            let uo = (b * sn + j) * ch;
            for c in 0..ch {
                gu[uo + c] += g[go + c] * h[c * kn + k];
                gh[c * kn + k] += g[go + c] * u[uo + c];
            }
        }
    });
    (gu, gh)
}

fn single_channel(u: &Tensor, h: &Tensor, backend: ConvBackend) -> Result<Tensor> {
    check_lengths(u.shape(), h.shape())?;
    let mut us = vec![1];
    us.extend_from_slice(u.shape());
    us.push(1);
    let mut hs = vec![1];
    hs.extend_from_slice(h.shape());
    let geo = ConvGeometry::new(&us, &hs, backend)?;
    let y = match backend {
        ConvBackend::Fft => forward_fft(u.data(), h.data(), &geo),
        ConvBackend::Direct => forward_direct(u.data(), h.data(), &geo),
    };
    let out = Tensor::from_vec(u.shape().to_vec(), y)?;
    out.ensure_finite("causal convolution")?;
    Ok(out)
}

/// Quadrant-causal linear convolution of one signal with one kernel over all axes.
pub fn fft_conv_causal(u: &Tensor, h: &Tensor) -> Result<Tensor> {
    single_channel(u, h, ConvBackend::Fft)
}

/// Same result as [`fft_conv_causal`] by explicit nested summation. Quadratic cost.
pub fn direct_conv_oracle(u: &Tensor, h: &Tensor) -> Result<Tensor> {
    single_channel(u, h, ConvBackend::Direct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn short_example() {
        let u = t(&[3], &[1.0, 2.0, 3.0]);
        let h = t(&[3], &[1.0, 1.0, 0.0]);
        for y in [fft_conv_causal(&u, &h).unwrap(), direct_conv_oracle(&u, &h).unwrap()] {
            for (a, b) in y.data().iter().zip([1.0, 3.0, 5.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_case() {
        let y = direct_conv_oracle(&t(&[1], &[5.0]), &t(&[1], &[2.0])).unwrap();
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut u = Tensor::zeros(&[6, 5]);
        u.set(&[0, 0], 1.0);
        let h = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let y = fft_conv_causal(&u, &h).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                let want = if i < 4 && j < 3 { h.get(&[i, j]) } else { 0.0 };
                assert!((y.get(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Tensor::randn(&[8, 8], 1.0, &mut rng);
        let mut h = Tensor::zeros(&[8, 8]);
        h.set(&[0, 0], 1.0);
        let y = fft_conv_causal(&u, &h).unwrap();
        assert!(y.rel_linf(&u).unwrap() < 1e-14);
    }

    #[test]
    fn random_1d_length_64_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Tensor::randn(&[64], 1.0, &mut rng);
        let h = Tensor::randn(&[64], 1.0, &mut rng);
        let a = fft_conv_causal(&u, &h).unwrap();
        let b = direct_conv_oracle(&u, &h).unwrap();
        assert!(a.rel_linf(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn rejects_bad_geometry() {
        let u = Tensor::zeros(&[4, 4]);
        assert!(matches!(
            fft_conv_causal(&u, &Tensor::zeros(&[4])),
            Err(Error::AxisCount { .. })
        ));
        assert!(matches!(
            fft_conv_causal(&u, &Tensor::zeros(&[5, 4])),
            Err(Error::KernelTooLong { axis: 0, .. })
        ));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let u = t(&[2], &[f64::NAN, 1.0]);
        let h = t(&[1], &[1.0]);
        assert_eq!(
            direct_conv_oracle(&u, &h).unwrap_err(),
            Error::NonFinite("causal convolution")
        );
    }
}
