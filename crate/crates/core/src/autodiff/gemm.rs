//! Strided matrix products backing the tape's dense and convolution primitives.

/// Row/column strides of a matrix view, in elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub row: usize,
    pub col: usize,
}

impl Layout {
    /// Row-major matrix with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }
}

/// `c = alpha * a·b + beta * c` for an `m×k` times `k×n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(span(m, k, la) <= a.len(), "gemm: lhs view out of bounds");
    assert!(span(k, n, lb) <= b.len(), "gemm: rhs view out of bounds");
    assert!(span(m, n, lc) <= c.len(), "gemm: output view out of bounds");
    // SAFETY: the three views were bounds-checked above, `c` is uniquely borrowed
    // and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.row as isize,
            la.col as isize,
            b.as_ptr(),
            lb.row as isize,
            lb.col as isize,
            beta,
            c.as_mut_ptr(),
            lc.row as isize,
            lc.col as isize,
        );
    }
}

fn span(rows: usize, cols: usize, l: Layout) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * l.row + (cols - 1) * l.col + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, Layout::rows(2), &b, Layout::transposed(2), 0.0, &mut c, Layout::rows(2));
        // a · bᵀ
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, 1.0, &a, Layout::transposed(2), &b, Layout::rows(2), 0.0, &mut c, Layout::rows(2));
        // aᵀ · b
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }
}
