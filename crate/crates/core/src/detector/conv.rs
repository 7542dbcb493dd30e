//! Same-padded 2-D convolution over channel-major buffers, lowered to GEMM.

use matrixmultiply::dgemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvShape {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, in_h: usize, in_w: usize) -> Self {
        let pad = kernel / 2;
        let out = |n: usize| (n + 2 * pad - kernel) / stride + 1;
        Self {
            cin,
            cout,
            kernel,
            stride,
            in_h,
            in_w,
            out_h: out(in_h),
            out_w: out(in_w),
        }
    }

    /// Rows of the lowered input matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch_len()
    }
}

/// Lower `x` (`cin × in_h × in_w`) to `patch_len × out_plane`.
pub(crate) fn im2col(x: &[f64], s: &ConvShape) -> Vec<f64> {
    let plane = s.out_plane();
    let mut col = vec![0.0; s.patch_len() * plane];
    if s.kernel == 1 && s.stride == 1 {
        col.copy_from_slice(x);
        return col;
    }
    let pad = (s.kernel / 2) as isize;
    for ci in 0..s.cin {
        let src = &x[ci * s.in_h * s.in_w..(ci + 1) * s.in_h * s.in_w];
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                let row = (ci * s.kernel + ky) * s.kernel + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..s.out_h {
                    let iy = (oy * s.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= s.in_h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * s.in_w..(iy as usize + 1) * s.in_w];
                    let dst_row = &mut dst[oy * s.out_w..(oy + 1) * s.out_w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * s.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < s.in_w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add a lowered gradient back to input layout.
pub(crate) fn col2im(gcol: &[f64], s: &ConvShape, gx: &mut [f64]) {
    let plane = s.out_plane();
    if s.kernel == 1 && s.stride == 1 {
        gx.iter_mut().zip(gcol).for_each(|(g, c)| *g += c);
        return;
    }
    let pad = (s.kernel / 2) as isize;
    for ci in 0..s.cin {
        let dst = &mut gx[ci * s.in_h * s.in_w..(ci + 1) * s.in_h * s.in_w];
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                let row = (ci * s.kernel + ky) * s.kernel + kx;
                let src = &gcol[row * plane..(row + 1) * plane];
                for oy in 0..s.out_h {
                    let iy = (oy * s.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= s.in_h as isize {
                        continue;
                    }
                    let base = iy as usize * s.in_w;
                    for ox in 0..s.out_w {
                        let ix = (ox * s.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < s.in_w as isize {
                            dst[base + ix as usize] += src[oy * s.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W · col + b`, `out` is `cout × out_plane`.
pub(crate) fn forward(weight: &[f64], bias: &[f64], col: &[f64], s: &ConvShape) -> Vec<f64> {
    let (m, k, n) = (s.cout, s.patch_len(), s.out_plane());
    let mut out = vec![0.0; m * n];
    for (row, b) in out.chunks_exact_mut(n).zip(bias) {
        row.fill(*b);
    }
    // SAFETY: all slices hold exactly the row-major m×k, k×n and m×n extents.
    unsafe {
        dgemm(
            m, k, n, 1.0,
            weight.as_ptr(), k as isize, 1,
            col.as_ptr(), n as isize, 1,
            1.0,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
    out
}

/// Accumulate weight and bias gradients.
pub(crate) fn backward_params(gout: &[f64], col: &[f64], s: &ConvShape, gw: &mut [f64], gb: &mut [f64]) {
    let (m, k, n) = (s.cout, s.patch_len(), s.out_plane());
    debug_assert_eq!(gw.len(), m * k);
    // gW (m×k) += gout (m×n) · colᵀ (n×k)
    // SAFETY: extents as documented above; colᵀ is addressed through strides.
    unsafe {
        dgemm(
            m, n, k, 1.0,
            gout.as_ptr(), n as isize, 1,
            col.as_ptr(), 1, n as isize,
            1.0,
            gw.as_mut_ptr(), k as isize, 1,
        );
    }
    for (g, row) in gb.iter_mut().zip(gout.chunks_exact(n)) {
        *g += row.iter().sum::<f64>();
    }
}

/// Gradient with respect to the lowered input: `Wᵀ · gout`.
pub(crate) fn backward_col(weight: &[f64], gout: &[f64], s: &ConvShape) -> Vec<f64> {
    let (m, k, n) = (s.cout, s.patch_len(), s.out_plane());
    let mut gcol = vec![0.0; k * n];
    // SAFETY: Wᵀ (k×m) is addressed through strides of the m×k weight.
    unsafe {
        dgemm(
            k, m, n, 1.0,
            weight.as_ptr(), 1, k as isize,
            gout.as_ptr(), n as isize, 1,
            0.0,
            gcol.as_mut_ptr(), n as isize, 1,
        );
    }
    gcol
}
