use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Strided view of a row-major operand for the GEMM kernel.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> View<'a> {
    fn rows(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `[r, cols]` block.
    fn transposed(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = a·b + beta·c` for an `[m, k]` by `[k, n]` product into row-major `c`.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    // SAFETY: the views were built from slices holding at least m*k and k*n
    // elements with strides that stay inside them; c holds m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product over the last two axes.
    ///
    /// Leading (batch) axes must match exactly, or `other` may be a plain
    /// matrix shared across every leading index of `self`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank >= 2 operands, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {sa:?} @ {sb:?}"
            )));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_rhs = lead_b.is_empty();
        if !shared_rhs && lead_a != lead_b {
            return Err(Error::Shape(format!(
                "matmul batch dimensions differ: {sa:?} @ {sb:?}"
            )));
        }
        let batch: usize = lead_a.iter().product();
        let mut out_shape = lead_a.to_vec();
        out_shape.extend([m, n]);

        let mut data = vec![0.0; batch * m * n];
        if shared_rhs {
            gemm(
                batch * m,
                k,
                n,
                View::rows(self.data(), k),
                View::rows(other.data(), n),
                0.0,
                &mut data,
            );
        } else {
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    View::rows(&self.data()[bi * m * k..], k),
                    View::rows(&other.data()[bi * k * n..], n),
                    0.0,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                );
            }
        }

        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![0.0; a.numel()];
                    if shared_rhs {
                        gemm(batch * m, n, k, View::rows(g, n), View::transposed(b.data(), n), 0.0, &mut ga);
                    } else {
                        for bi in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                View::rows(&g[bi * m * n..], n),
                                View::transposed(&b.data()[bi * k * n..], n),
                                0.0,
                                &mut ga[bi * m * k..(bi + 1) * m * k],
                            );
                        }
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![0.0; b.numel()];
                    if shared_rhs {
                        gemm(k, batch * m, n, View::transposed(a.data(), k), View::rows(g, n), 0.0, &mut gb);
                    } else {
                        for bi in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                View::transposed(&a.data()[bi * m * k..], k),
                                View::rows(&g[bi * m * n..], n),
                                0.0,
                                &mut gb[bi * k * n..(bi + 1) * k * n],
                            );
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}
