//! Low-level numeric kernels shared by the graph operations.
//!
//! Matrix products route through `matrixmultiply::dgemm` once they are large
//! enough to amortize its packing overhead; tiny products use plain loops.

/// Flop threshold (m*k*n) below which the naive loops beat the packed kernel.
const GEMM_NAIVE_LIMIT: usize = 4096;

/// C = alpha * op(A) * op(B) + beta * C for row-major contiguous buffers.
///
/// `a` holds the logical m x k matrix (stored k x m when `a_trans`), `b` the
/// logical k x n matrix (stored n x k when `b_trans`), `c` is m x n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n <= GEMM_NAIVE_LIMIT {
        gemm_naive(m, k, n, alpha, a, a_trans, b, b_trans, beta, c);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
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

#[allow(clippy::too_many_arguments)]
fn gemm_naive(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
    }
    let a_at = |i: usize, l: usize| if a_trans { a[l * m + i] } else { a[i * k + l] };
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = alpha * a_at(i, l);
            if av == 0.0 {
                continue;
            }
            if b_trans {
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += av * b[j * k + l];
                }
            } else {
                let brow = &b[l * n..(l + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for (st, &dim) in s.iter_mut().zip(shape).rev() {
        *st = acc;
        acc *= dim;
    }
    s
}

/// Broadcast shape of two operands (numpy rules: align right, dims equal or 1).
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[i] = da.max(db);
    }
    Some(out)
}

/// Strides indexing `shape` from a position in `out_shape`: broadcast axes get
/// stride 0 so the same element is revisited.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - shape.len();
    let own = strides_of(shape);
    let mut s = vec![0usize; rank];
    for i in pad..rank {
        let dim = shape[i - pad];
        s[i] = if dim == 1 && out_shape[i] != 1 { 0 } else { own[i - pad] };
    }
    s
}

/// Visits every position of `out_shape`, yielding the flat output index and
/// the two operand offsets induced by broadcast strides.
pub(crate) fn for_each_broadcast2(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for flat in 0..total {
        f(flat, off_a, off_b);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off_a += sa[d];
            off_b += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off_a -= sa[d] * out_shape[d];
            off_b -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Exact GELU and its derivative (error-function form).
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_reference() {
        // 2x3 * 3x2, all four transpose layouts.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3 row-major
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // same matrix stored 3x2
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2 row-major
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // same matrix stored 2x3
        let expect = [58.0, 64.0, 139.0, 154.0];
        for (ad, atr) in [(&a, false), (&at, true)] {
            for (bd, btr) in [(&b, false), (&bt, true)] {
                let mut c = [0.0; 4];
                gemm(2, 3, 2, 1.0, &ad[..], atr, &bd[..], btr, 0.0, &mut c);
                assert_eq!(c, expect);
            }
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let mut c = [100.0, 0.0, 0.0, 100.0];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c, [102.0, 3.0, 4.0, 105.0]);
    }

    #[test]
    fn large_gemm_agrees_with_naive() {
        // Force both paths over the threshold boundary and compare.
        let m = 33;
        let k = 17;
        let n = 29;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut fast = vec![0.0; m * n];
        let mut slow = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a, false, &b, false, 0.0, &mut fast);
        gemm_naive(m, k, n, 1.0, &a, false, &b, false, 0.0, &mut slow);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shapes(&[3, 1], &[4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shapes(&[2, 3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[5, 2, 3], &[3]), Some(vec![5, 2, 3]));
        assert_eq!(broadcast_shapes(&[2, 3], &[4]), None);
    }

    #[test]
    fn gelu_limits() {
        assert_eq!(gelu(0.0), 0.0);
        assert!(gelu(10.0) > 9.999 && gelu(10.0) <= 10.0);
        assert!(gelu(-10.0).abs() < 1e-8);
    }
}
