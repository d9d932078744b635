//! Slice-level numeric kernels shared by the taped forward pass and the
//! tape-free incremental decoder.

use super::Scalar;

fn beta<F: Scalar>(accumulate: bool) -> F {
    if accumulate {
        F::one()
    } else {
        F::zero()
    }
}

/// `C (+)= A·B` with `A: m×k`, `B: k×n`, `C: m×n`, all row-major.
pub fn matmul_nn<F: Scalar>(
    a: &[F],
    b: &[F],
    c: &mut [F],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        beta(accumulate),
        c,
        n as isize,
        1,
    );
}

/// `C (+)= A·Bᵀ` with `A: m×k`, `B: n×k`.
pub fn matmul_nt<F: Scalar>(
    a: &[F],
    b: &[F],
    c: &mut [F],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        beta(accumulate),
        c,
        n as isize,
        1,
    );
}

/// `C (+)= Aᵀ·B` with `A: k×m`, `B: k×n`.
pub fn matmul_tn<F: Scalar>(
    a: &[F],
    b: &[F],
    c: &mut [F],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        beta(accumulate),
        c,
        n as isize,
        1,
    );
}

/// Softmax of one row in place. Entries with `allowed[j] == false` get
/// probability 0; a row with nothing allowed becomes all zeros.
pub fn masked_softmax_row<F: Scalar>(row: &mut [F], allowed: Option<&[bool]>) {
    let ok = |j: usize| allowed.is_none_or(|m| m[j]);
    let mut max = F::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if ok(j) && x > max {
            max = x;
        }
    }
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|x| *x = F::zero());
        return;
    }
    let mut sum = F::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if ok(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = F::zero();
        }
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Normalizes one row to zero mean and unit variance (eps inside the root),
/// then applies `gain` and `bias`. Returns `1/sqrt(var + eps)`.
pub fn layer_norm_row<F: Scalar>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    eps: F,
    out: &mut [F],
    xhat: Option<&mut [F]>,
) -> F {
    let n = F::of(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + eps).sqrt();
    match xhat {
        Some(xh) => {
            for j in 0..x.len() {
                xh[j] = (x[j] - mean) * rstd;
                out[j] = xh[j] * gain[j] + bias[j];
            }
        }
        None => {
            for j in 0..x.len() {
                out[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
            }
        }
    }
    rstd
}

/// Sinusoidal position table, `rows × d` row-major. `d` must be even.
pub fn sinusoid_table<F: Scalar>(rows: usize, d: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * d];
    for pos in 0..rows {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
            out[pos * d + 2 * i] = F::of(angle.sin());
            out[pos * d + 2 * i + 1] = F::of(angle.cos());
        }
    }
    out
}

pub fn log_softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits
        .iter()
        .copied()
        .fold(F::neg_infinity(), |a, b| a.max(b));
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_naive() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5 - 2.0).collect(); // 3x4
        let mut c = vec![0.0; 8];
        matmul_nn(&a, &b, &mut c, 2, 3, 4, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // bt is 4x3 = transpose of b
        let bt: Vec<f64> = (0..12).map(|idx| b[(idx % 3) * 4 + idx / 3]).collect();
        let mut c2 = vec![0.0; 8];
        matmul_nt(&a, &bt, &mut c2, 2, 3, 4, false);
        assert_eq!(c, c2);
        // at is 3x2
        let at: Vec<f64> = (0..6).map(|idx| a[(idx % 2) * 3 + idx / 2]).collect();
        let mut c3 = vec![1.0; 8];
        matmul_tn(&at, &b, &mut c3, 2, 3, 4, true);
        for (x, y) in c3.iter().zip(&c) {
            assert_eq!(*x, y + 1.0);
        }
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let mut row = [1.0f64, 2.0, 3.0];
        masked_softmax_row(&mut row, Some(&[false, false, false]));
        assert_eq!(row, [0.0; 3]);
    }
}
