//! Raw buffer kernels shared by forward and backward passes.

use super::Scalar;

#[allow(clippy::too_many_arguments)]
pub(super) fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    (rsa, csa): (isize, isize),
    b_len: usize,
    (rsb, csb): (isize, isize),
    c_len: usize,
) {
    let reach = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(reach(m, k, rsa, csa) <= a_len, "gemm: lhs out of bounds");
    assert!(reach(k, n, rsb, csb) <= b_len, "gemm: rhs out of bounds");
    assert!(m * n <= c_len, "gemm: output out of bounds");
}

/// Splits `shape` around `axis` into `(outer, dim, inner)` extents.
pub(super) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(super) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out[idx] = src[perm-mapped idx]`, where output axis `i` is input axis `perm[i]`.
pub(super) fn permute<F: Scalar>(src: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = mapped[last];
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|j| src[base + j * inner_stride]));
        }
        // advance the odometer over all but the last axis
        let mut axis = last;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            counter[axis] += 1;
            base += mapped[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            base -= mapped[axis] * out_shape[axis];
            counter[axis] = 0;
        }
    }
}

pub(super) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Standard normal CDF and density.
pub(super) fn phi_cdf<F: Scalar>(x: F) -> F {
    let half = F::from_f64c(0.5);
    half * (F::one() + (x * F::from_f64c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(super) fn phi_pdf<F: Scalar>(x: F) -> F {
    let c = F::from_f64c(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    c * (-(x * x) * F::from_f64c(0.5)).exp()
}
