//! im2col / col2im lowering and the GEMM wrapper used by the convolution,
//! transposed convolution and dense ops.

/// Geometry of a 2-D convolution from `[n, c, h, w]` to `[n, k, oh, ow]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Rows of the lowered matrix: one per (channel, kernel row, kernel col).
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Columns of the lowered matrix: one per (batch, output row, output col).
    pub fn col_cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Output extent of a convolution along one axis, if the kernel fits.
pub(crate) fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if k > padded || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Lowers `input` (`[n, c, h, w]`) into a `[c*kh*kw, n*oh*ow]` row-major matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.col_cols();
    let mut out = vec![0.0; g.col_rows() * cols];
    let plane = g.h * g.w;
    let opos = g.oh * g.ow;
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for b in 0..g.n {
                    let src = &input[(b * g.c + ci) * plane..(b * g.c + ci + 1) * plane];
                    let dst = &mut dst_row[b * opos..(b + 1) * opos];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-and-adds a lowered matrix back into `[n, c, h, w]`.
pub(crate) fn col2im(cols_mat: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let cols = g.col_cols();
    let plane = g.h * g.w;
    let opos = g.oh * g.ow;
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src_row = &cols_mat[row * cols..(row + 1) * cols];
                for b in 0..g.n {
                    let dst = &mut out[(b * g.c + ci) * plane..(b * g.c + ci + 1) * plane];
                    let src = &src_row[b * opos..(b + 1) * opos];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[n, c, p]` -> `[c, n*p]`.
pub(crate) fn batch_major_to_channel_major(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * p..(b * c + ch + 1) * p];
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[c, n*p]` -> `[n, c, p]`.
pub(crate) fn channel_major_to_batch_major(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for b in 0..n {
            let src = &x[ch * n * p + b * p..ch * n * p + (b + 1) * p];
            out[(b * c + ch) * p..(b * c + ch + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// Matrix operand view: data plus row and column strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, rs: cols as isize, cs: 1 }
    }

    /// The transpose of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols as isize }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows as isize - 1) as usize * self.rs as usize + (cols as isize - 1) as usize * self.cs as usize
    }
}

/// `c = a (m x k) * b (k x n) + beta * c`, with `c` row-major `m x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert!(m > 0 && k > 0 && n > 0);
    assert!(a.max_index(m, k) < a.data.len());
    assert!(b.max_index(k, n) < b.data.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: operand extents were checked against the slice lengths above and
    // `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
