//! Raw loops over row-major slices. Callers validate shapes.

/// `c[n,m] += a[n,k] · b[k,m]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * m..(i + 1) * m];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n,k] += a[n,m] · b[k,m]ᵀ`
pub fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            c[i * k + p] += s;
        }
    }
}

/// `c[k,m] += a[n,k]ᵀ · b[n,m]`
pub fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * m..(i + 1) * m];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * m..(p + 1) * m];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Geometry of a 2D sliding window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `[C,H,W]` into `[C·k·k, out_h·out_w]`, zero outside the padded frame.
pub fn im2col(input: &[f64], w: &Window) -> Vec<f64> {
    let cols = w.cols();
    let mut out = vec![0.0; w.rows() * cols];
    for c in 0..w.channels {
        let plane = &input[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..w.kernel {
            for kx in 0..w.kernel {
                let r = (c * w.kernel + ky) * w.kernel + kx;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for oy in 0..w.out_h {
                    let iy = (oy * w.stride + ky) as isize - w.pad as isize;
                    if iy < 0 || iy >= w.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w.width..(iy as usize + 1) * w.width];
                    for ox in 0..w.out_w {
                        let ix = (ox * w.stride + kx) as isize - w.pad as isize;
                        if ix >= 0 && ix < w.width as isize {
                            dst[oy * w.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C,H,W]`.
pub fn col2im(cols_data: &[f64], w: &Window, out: &mut [f64]) {
    let cols = w.cols();
    for c in 0..w.channels {
        let base = c * w.height * w.width;
        for ky in 0..w.kernel {
            for kx in 0..w.kernel {
                let r = (c * w.kernel + ky) * w.kernel + kx;
                let src = &cols_data[r * cols..(r + 1) * cols];
                for oy in 0..w.out_h {
                    let iy = (oy * w.stride + ky) as isize - w.pad as isize;
                    if iy < 0 || iy >= w.height as isize {
                        continue;
                    }
                    let row_base = base + iy as usize * w.width;
                    for ox in 0..w.out_w {
                        let ix = (ox * w.stride + kx) as isize - w.pad as isize;
                        if ix >= 0 && ix < w.width as isize {
                            out[row_base + ix as usize] += src[oy * w.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
