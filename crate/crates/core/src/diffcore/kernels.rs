//! Dense kernels shared by the forward and adjoint rules.

/// Layout of a matrix operand in row-major storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    Normal,
    Transposed,
}

/// `c = a · b + beta · c` where `a` is logically m×k and `b` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the asserts above bound every index the strides can reach.
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
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Output positions `lo..hi` whose input coordinate for kernel tap `k`
    /// lands inside `0..limit`.
    #[inline]
    fn valid(&self, k: usize, limit: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if limit + p > k { (limit + p - k).div_ceil(s).min(out) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// Unfolds `[N, C, H, W]` input into a `[C·kh·kw, N·Ho·Wo]` patch matrix.
/// Rows are produced in storage order, so every entry is written once.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.rows() * g.cols());
    for c in 0..g.in_channels {
        for ki in 0..g.kernel_h {
            let (y0, y1) = g.valid(ki, g.height, g.out_h);
            for kj in 0..g.kernel_w {
                let (x0, x1) = g.valid(kj, g.width, g.out_w);
                for n in 0..g.batch {
                    let src = &input[(n * g.in_channels + c) * g.height * g.width..];
                    for oy in 0..g.out_h {
                        if oy < y0 || oy >= y1 {
                            out.resize(out.len() + g.out_w, 0.0);
                            continue;
                        }
                        let iy = oy * g.stride + ki - g.pad;
                        let line = &src[iy * g.width..(iy + 1) * g.width];
                        out.resize(out.len() + x0, 0.0);
                        if g.stride == 1 {
                            let ix0 = x0 + kj - g.pad;
                            out.extend_from_slice(&line[ix0..ix0 + x1 - x0]);
                        } else {
                            out.extend((x0..x1).map(|ox| line[ox * g.stride + kj - g.pad]));
                        }
                        out.resize(out.len() + g.out_w - x1, 0.0);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im_add(cols_grad: &[f64], g: &ConvGeometry, input_grad: &mut [f64]) {
    let cols = g.cols();
    let plane = g.out_h * g.out_w;
    for c in 0..g.in_channels {
        for ki in 0..g.kernel_h {
            let (y0, y1) = g.valid(ki, g.height, g.out_h);
            for kj in 0..g.kernel_w {
                let (x0, x1) = g.valid(kj, g.width, g.out_w);
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src_row = &cols_grad[row * cols..(row + 1) * cols];
                for n in 0..g.batch {
                    let dst = &mut input_grad[(n * g.in_channels + c) * g.height * g.width..];
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ki - g.pad;
                        let base = n * plane + oy * g.out_w;
                        let line = &mut dst[iy * g.width..(iy + 1) * g.width];
                        for (v, ox) in src_row[base + x0..base + x1].iter().zip(x0..x1) {
                            line[ox * g.stride + kj - g.pad] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[A, B, P]` → `[B, A, P]` block transpose.
pub(crate) fn swap_leading(data: &[f64], a: usize, b: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * p;
            let dst = (j * a + i) * p;
            out[dst..dst + p].copy_from_slice(&data[src..src + p]);
        }
    }
    out
}
