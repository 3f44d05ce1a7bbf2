//! Dense matrix helpers: GEMM, singular values and numerical rank.

use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Error, Result};

/// `c = alpha · op(a) · op(b) + beta · c` for row-major operands.
///
/// `op(a)` is `m × k`; when `a_t` is set, `a` is stored as `k × m`. Likewise
/// `op(b)` is `k × n`, stored as `n × k` when `b_t` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths were checked above and the strides describe row-major
    // layouts that stay inside each slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Singular values of a 2-D tensor in descending order (one-sided Jacobi).
pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    if a.ndim() != 2 {
        return Err(shape_err(format!("expected a matrix, got shape {:?}", a.shape())));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("singular value decomposition input"));
    }
    let (rows, cols) = (a.shape()[0], a.shape()[1]);
    // Orthogonalize the columns of the taller orientation.
    let (m, n, mut cols_data) = if rows >= cols {
        (rows, cols, column_major(a.data(), rows, cols))
    } else {
        (cols, rows, a.data().to_vec())
    };
    let scale = a.max_abs();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for v in cols_data.iter_mut() {
        *v /= scale;
    }
    let col = |d: &Vec<f64>, j: usize| d[j * m..(j + 1) * m].to_vec();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let cp = col(&cols_data, p);
                let cq = col(&cols_data, q);
                let alpha: f64 = cp.iter().map(|x| x * x).sum();
                let beta: f64 = cq.iter().map(|x| x * x).sum();
                let gamma: f64 = cp.iter().zip(&cq).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = cols_data[p * m + i];
                    let y = cols_data[q * m + i];
                    cols_data[p * m + i] = c * x - s * y;
                    cols_data[q * m + i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| col(&cols_data, j).iter().map(|x| x * x).sum::<f64>().sqrt() * scale)
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

fn column_major(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Number of singular values above `rel_tol` times the largest one.
pub fn matrix_rank(a: &Tensor, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid(format!("rank tolerance must lie in (0, 1), got {rel_tol}")));
    }
    let sv = singular_values(a)?;
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * top).count())
}

/// Mode-`axis` unfolding: rows indexed by `axis`, columns by the remaining axes.
pub fn unfold(t: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= t.ndim() {
        return Err(shape_err(format!("axis {axis} out of range for {:?}", t.shape())));
    }
    let mut perm = vec![axis];
    perm.extend((0..t.ndim()).filter(|&a| a != axis));
    let moved = t.permute(&perm)?;
    let rows = t.shape()[axis];
    moved.reshape(&[rows, t.len() / rows])
}
