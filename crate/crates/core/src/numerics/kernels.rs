//! Raw row-major kernels shared by the tape's forward and backward passes.

/// `c (+)= op(a) · op(b)` where `a` is stored `a_rows × a_cols` and `b` is
/// stored `b_rows × b_cols`, both row-major. `op` transposes when the flag
/// is set. Returns the `(m, n)` extents of the product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) -> (usize, usize) {
    let (m, k) = if trans_a {
        (a_cols, a_rows)
    } else {
        (a_rows, a_cols)
    };
    let (k2, n) = if trans_b {
        (b_cols, b_rows)
    } else {
        (b_rows, b_cols)
    };
    assert_eq!(k, k2, "gemm inner extents");
    assert_eq!(c.len(), m * n, "gemm output extent");
    // Row-major strides of op(x): element (i, j) lives at i*rs + j*cs.
    let (rsa, csa) = if trans_a {
        (1, a_cols as isize)
    } else {
        (a_cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b_cols as isize)
    } else {
        (b_cols as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    if m == 0 || n == 0 {
        return (m, n);
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return (m, n);
    }
    // SAFETY: extents and strides above describe in-bounds views of `a`,
    // `b` and `c`, which the asserts and slice lengths guarantee.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
    (m, n)
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn transposed_operands_match_naive() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..8).map(|v| (v as f64).sin()).collect(); // 4x2
        let want = naive(&a, 3, 4, &b, 2);

        let at = transpose(&a, 3, 4); // 4x3
        let bt = transpose(&b, 4, 2); // 2x4
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let (aa, ar, ac) = if ta { (&at, 4, 3) } else { (&a, 3, 4) };
            let (bb, br, bc) = if tb { (&bt, 2, 4) } else { (&b, 4, 2) };
            let mut c = vec![0.0; 6];
            gemm(aa, ar, ac, ta, bb, br, bc, tb, &mut c, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{ta} {tb}");
            }
        }
    }

    #[test]
    fn accumulate_adds_into_output() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut c = [10.0];
        gemm(&a, 1, 2, false, &b, 2, 1, false, &mut c, true);
        assert_eq!(c[0], 21.0);
    }
}
