//! Dense f64 activations.
//!
//! Feature maps are stored channel-major as `[C, N, H, W]` so that a
//! convolution over a whole batch is a single `W[OC, K] x cols[K, N*OH*OW]`
//! product and batch-norm statistics run over contiguous slices.

/// Feature map in `[C, N, H, W]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            n,
            h,
            w,
            data: vec![0.0; c * n * h * w],
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }

    /// Elements per channel (N*H*W).
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let r = self.row(i);
                let mut best = 0;
                for (j, v) in r.iter().enumerate() {
                    if *v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` on row-major buffers, where
/// `op(A)` is `m x k` and `op(B)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // strides of op(A) and op(B) viewed as row-major
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized m*k, k*n and m*n (checked above in debug
    // builds, guaranteed by every caller); strides describe those buffers.
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
