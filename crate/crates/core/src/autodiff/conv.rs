//! Raw 2-D cross-correlation kernels used by the graph's conv2d op.
//!
//! The convolution is lowered to matrix products over an im2col buffer laid
//! out position-major (`[positions, C*kh*kw]`) so every product is in
//! plain row-major x row-major form, whose inner loops vectorize without
//! reassociating float additions. Accumulation order is fixed, so results
//! are bit-stable across runs.

/// C[m,n] += A[m,k] * B[k,n], all row-major. `out` is not cleared.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n].
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    matmul_acc(a, b, m, k, n, out);
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvDims {
    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }
}

/// Fill `cols` (positions x patch) with the input window of one sample.
fn im2col(input: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let patch = d.patch();
    cols.fill(0.0);
    for oy in 0..d.out_h {
        for ox in 0..d.out_w {
            let row = &mut cols[(oy * d.out_w + ox) * patch..(oy * d.out_w + ox + 1) * patch];
            for c in 0..d.in_channels {
                let plane = &input[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
                for u in 0..d.kh {
                    let iy = (oy * d.stride + u) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.in_w..(iy as usize + 1) * d.in_w];
                    let dst = &mut row[c * d.kh * d.kw + u * d.kw..c * d.kh * d.kw + (u + 1) * d.kw];
                    for (v, slot) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + v) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.in_w as isize {
                            *slot = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a position-major gradient buffer back onto one input sample.
fn col2im_acc(dcols: &[f64], d: &ConvDims, dinput: &mut [f64]) {
    let patch = d.patch();
    for oy in 0..d.out_h {
        for ox in 0..d.out_w {
            let row = &dcols[(oy * d.out_w + ox) * patch..(oy * d.out_w + ox + 1) * patch];
            for c in 0..d.in_channels {
                let plane = &mut dinput[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
                for u in 0..d.kh {
                    let iy = (oy * d.stride + u) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.in_w..(iy as usize + 1) * d.in_w];
                    let src = &row[c * d.kh * d.kw + u * d.kw..c * d.kh * d.kw + (u + 1) * d.kw];
                    for (v, &value) in src.iter().enumerate() {
                        let ix = (ox * d.stride + v) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.in_w as isize {
                            dst[ix as usize] += value;
                        }
                    }
                }
            }
        }
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Forward cross-correlation; output layout [batch, out_channels, out_h, out_w].
pub(crate) fn forward(input: &[f64], kernel: &[f64], d: &ConvDims) -> Vec<f64> {
    let positions = d.positions();
    let patch = d.patch();
    let mut out = vec![0.0; d.batch * d.out_channels * positions];
    let mut cols = vec![0.0; positions * patch];
    let mut kernel_t = vec![0.0; patch * d.out_channels];
    transpose(kernel, d.out_channels, patch, &mut kernel_t);
    let mut out_t = vec![0.0; positions * d.out_channels];
    let in_sample = d.in_channels * d.in_h * d.in_w;
    for n in 0..d.batch {
        im2col(&input[n * in_sample..(n + 1) * in_sample], d, &mut cols);
        matmul(&cols, &kernel_t, positions, patch, d.out_channels, &mut out_t);
        transpose(
            &out_t,
            positions,
            d.out_channels,
            &mut out[n * d.out_channels * positions..(n + 1) * d.out_channels * positions],
        );
    }
    out
}

/// Backward pass. Accumulates into `dinput`/`dkernel` when provided.
pub(crate) fn backward(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    d: &ConvDims,
    mut dinput: Option<&mut [f64]>,
    mut dkernel: Option<&mut [f64]>,
) {
    let positions = d.positions();
    let patch = d.patch();
    let in_sample = d.in_channels * d.in_h * d.in_w;
    let out_sample = d.out_channels * positions;
    let mut cols = vec![0.0; positions * patch];
    let mut dout_t = vec![0.0; positions * d.out_channels];
    let mut dcols = vec![0.0; positions * patch];
    for n in 0..d.batch {
        let dout_n = &dout[n * out_sample..(n + 1) * out_sample];
        if let Some(dk) = dkernel.as_deref_mut() {
            im2col(&input[n * in_sample..(n + 1) * in_sample], d, &mut cols);
            // dK[k, patch] += dOut[k, positions] * cols[positions, patch]
            matmul_acc(dout_n, &cols, d.out_channels, positions, patch, dk);
        }
        if let Some(di) = dinput.as_deref_mut() {
            transpose(dout_n, d.out_channels, positions, &mut dout_t);
            // dcols[positions, patch] = dOut_t[positions, k] * K[k, patch]
            matmul(&dout_t, kernel, positions, d.out_channels, patch, &mut dcols);
            col2im_acc(&dcols, d, &mut di[n * in_sample..(n + 1) * in_sample]);
        }
    }
}
