//! Central finite-difference checks against the reverse pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::Module;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries probed per parameter; smaller tensors are checked exhaustively.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_entries: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// `max |analytic − numeric| / max(max |numeric|, max |analytic|)` over the probed entries.
    pub rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error <= tol
    }
}

/// Norm-wise relative error with a floor that keeps exact zeros at zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-10);
    diff / scale
}

/// Compares reverse-mode gradients of `loss` with central differences for
/// every parameter of `module`.
pub fn check_module<M, F>(module: &M, loss: F, opts: GradCheckOptions) -> Result<Vec<GradCheckReport>>
where
    M: Module + Clone,
    F: Fn(&M, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(module, &mut tape)?;
    let grads = tape.backward(l)?;
    let params = module.params();
    let analytic = tape.param_gradients(&grads, &params);
    drop(tape);

    let eval = |m: &M| -> Result<f64> {
        let mut t = Tape::inference();
        let v = loss(m, &mut t)?;
        Ok(t.value(v).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = module.clone();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let entries: Vec<usize> = if n <= opts.max_entries {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_entries).into_vec();
            v.sort_unstable();
            v
        };
        let mut a = Vec::with_capacity(entries.len());
        let mut num = Vec::with_capacity(entries.len());
        for &e in &entries {
            let orig = probe.params()[pi].value.data()[e];
            probe.params_mut()[pi].value.data_mut()[e] = orig + opts.step;
            let plus = eval(&probe)?;
            probe.params_mut()[pi].value.data_mut()[e] = orig - opts.step;
            let minus = eval(&probe)?;
            probe.params_mut()[pi].value.data_mut()[e] = orig;
            num.push((plus - minus) / (2.0 * opts.step));
            a.push(grad.data()[e]);
        }
        reports.push(GradCheckReport {
            name: params[pi].name.clone(),
            checked: entries.len(),
            rel_error: relative_error(&a, &num),
        });
    }
    Ok(reports)
}
