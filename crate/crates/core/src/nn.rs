//! Dense f64 kernels used by the network: GEMM, im2col convolutions,
//! fully connected layers and LeakyReLU. Everything is row-major and
//! single-sample; batching happens one level up.

/// `C = op(A)·op(B) + beta·C` for row-major contiguous matrices, where
/// `op(A)` is m×k and `op(B)` is k×n. With `ta` set, `a` holds the k×m
/// matrix (likewise `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the declared shapes
    // and the strides describe exactly those contiguous layouts.
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

#[inline]
pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Geometry of a square-kernel 2-D convolution with `pad = kernel / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Conv2dGeom {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, h_in: usize, w_in: usize) -> Self {
        let pad = kernel / 2;
        let out = |n: usize| (n + 2 * pad - kernel) / stride + 1;
        Conv2dGeom {
            cin,
            cout,
            kernel,
            stride,
            pad,
            h_in,
            w_in,
            h_out: out(h_in),
            w_out: out(w_in),
        }
    }

    pub fn patch(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch()
    }

    /// Output rows/columns whose receptive field never touches padding.
    pub fn interior(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let range = |n_in: usize, n_out: usize| {
            let lo = self.pad.div_ceil(self.stride);
            let hi = (0..n_out)
                .take_while(|&o| o * self.stride + self.kernel <= n_in + self.pad)
                .last()
                .map_or(0, |o| o + 1);
            lo.min(hi)..hi
        };
        (range(self.h_in, self.h_out), range(self.w_in, self.w_out))
    }
}

/// `cols[(c·k + ky)·k + kx][oy·w_out + ox]`.
pub fn im2col(input: &[f64], g: &Conv2dGeom, cols: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let n = g.out_len();
    for c in 0..g.cin {
        let plane = &input[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * n..((c * k + ky) * k + kx + 1) * n];
                for oy in 0..g.h_out {
                    let iy = (oy * s + ky) as isize - p;
                    let dst = &mut row[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h_in as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w_in..(iy as usize + 1) * g.w_in];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *d = if ix < 0 || ix >= g.w_in as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im(cols: &[f64], g: &Conv2dGeom, dinput: &mut [f64]) {
    dinput.iter_mut().for_each(|v| *v = 0.0);
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let n = g.out_len();
    for c in 0..g.cin {
        let plane = &mut dinput[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * n..((c * k + ky) * k + kx + 1) * n];
                for oy in 0..g.h_out {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h_in as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w_in..(iy as usize + 1) * g.w_in];
                    for ox in 0..g.w_out {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.w_in as isize {
                            dst[ix as usize] += row[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 1-D convolution over `len` time steps, `pad = kernel / 2`, stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl Conv1dGeom {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, len_in: usize) -> Self {
        let pad = kernel / 2;
        Conv1dGeom {
            cin,
            cout,
            kernel,
            stride,
            len_in,
            len_out: (len_in + 2 * pad - kernel) / stride + 1,
        }
    }

    fn as_2d(&self) -> Conv2dGeom {
        // a 1×len image with a k×k kernel would pad rows too; build the
        // 1-D layout by hand instead
        Conv2dGeom {
            cin: self.cin,
            cout: self.cout,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.kernel / 2,
            h_in: 1,
            w_in: self.len_in,
            h_out: 1,
            w_out: self.len_out,
        }
    }

    pub fn patch(&self) -> usize {
        self.cin * self.kernel
    }
}

pub fn im2col_1d(input: &[f64], g: &Conv1dGeom, cols: &mut [f64]) {
    let g2 = g.as_2d();
    let (k, s, p) = (g.kernel, g.stride, g2.pad as isize);
    for c in 0..g.cin {
        for kx in 0..k {
            let row = &mut cols[(c * k + kx) * g.len_out..(c * k + kx + 1) * g.len_out];
            for (o, d) in row.iter_mut().enumerate() {
                let ix = (o * s + kx) as isize - p;
                *d = if ix < 0 || ix >= g.len_in as isize {
                    0.0
                } else {
                    input[c * g.len_in + ix as usize]
                };
            }
        }
    }
}

pub fn col2im_1d(cols: &[f64], g: &Conv1dGeom, dinput: &mut [f64]) {
    dinput.iter_mut().for_each(|v| *v = 0.0);
    let (k, s, p) = (g.kernel, g.stride, (g.kernel / 2) as isize);
    for c in 0..g.cin {
        for kx in 0..k {
            let row = &cols[(c * k + kx) * g.len_out..(c * k + kx + 1) * g.len_out];
            for (o, v) in row.iter().enumerate() {
                let ix = (o * s + kx) as isize - p;
                if ix >= 0 && ix < g.len_in as isize {
                    dinput[c * g.len_in + ix as usize] += v;
                }
            }
        }
    }
}

/// `y = W·x + b` with `W` stored `[out][in]`.
pub fn linear(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let (n_out, n_in) = (b.len(), x.len());
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        y[o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates `dW += dy·xᵀ`, `db += dy` when `grads` is given; writes
/// `dx = Wᵀ·dy` when `dx` is given.
pub fn linear_backward(w: &[f64], x: &[f64], dy: &[f64], grads: Option<(&mut [f64], &mut [f64])>, dx: Option<&mut [f64]>) {
    let n_in = x.len();
    if let Some((dw, db)) = grads {
        for (o, &g) in dy.iter().enumerate() {
            db[o] += g;
            for (d, xi) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                *d += g * xi;
            }
        }
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dy.iter().enumerate() {
            for (d, wv) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += g * wv;
            }
        }
    }
}
