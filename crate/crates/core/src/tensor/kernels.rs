//! Raw loops behind the dense ops. Callers validate shapes.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.ph + 1 - self.kh
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pw + 1 - self.kw
    }

    /// Output rows `oy` whose input row `oy + ki - ph` is inside the image.
    fn rows(&self, ki: usize) -> std::ops::Range<usize> {
        let lo = self.ph.saturating_sub(ki);
        let hi = (self.height + self.ph).saturating_sub(ki).min(self.out_height());
        lo..hi.max(lo)
    }

    fn cols(&self, kj: usize) -> std::ops::Range<usize> {
        let lo = self.pw.saturating_sub(kj);
        let hi = (self.width + self.pw).saturating_sub(kj).min(self.out_width());
        lo..hi.max(lo)
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeometry, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let mut out = vec![0.0; g.filters * plane];
    for f in 0..g.filters {
        let out_f = &mut out[f * plane..(f + 1) * plane];
        if let Some(b) = bias {
            out_f.iter_mut().for_each(|v| *v = b[f]);
        }
        for c in 0..g.channels {
            let in_c = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ki in 0..g.kh {
                let rows = g.rows(ki);
                for kj in 0..g.kw {
                    let w = kernel[((f * g.channels + c) * g.kh + ki) * g.kw + kj];
                    if w == 0.0 {
                        continue;
                    }
                    let cols = g.cols(kj);
                    for oy in rows.clone() {
                        let iy = oy + ki - g.ph;
                        let src = &in_c[iy * g.width + cols.start + kj - g.pw..][..cols.len()];
                        let dst = &mut out_f[oy * wo + cols.start..][..cols.len()];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients given the output gradient.
pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let hw = g.height * g.width;

    if let Some(gb) = grad_bias {
        for f in 0..g.filters {
            gb[f] += grad_out[f * plane..(f + 1) * plane].iter().sum::<f64>();
        }
    }

    if let Some(gk) = grad_kernel {
        for f in 0..g.filters {
            let go = &grad_out[f * plane..(f + 1) * plane];
            for c in 0..g.channels {
                let in_c = &input[c * hw..(c + 1) * hw];
                for ki in 0..g.kh {
                    let rows = g.rows(ki);
                    for kj in 0..g.kw {
                        let cols = g.cols(kj);
                        let mut acc = 0.0;
                        for oy in rows.clone() {
                            let iy = oy + ki - g.ph;
                            let src = &in_c[iy * g.width + cols.start + kj - g.pw..][..cols.len()];
                            let gsrc = &go[oy * wo + cols.start..][..cols.len()];
                            acc += src.iter().zip(gsrc).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gk[((f * g.channels + c) * g.kh + ki) * g.kw + kj] += acc;
                    }
                }
            }
        }
    }

    if let Some(gi) = grad_input {
        for f in 0..g.filters {
            let go = &grad_out[f * plane..(f + 1) * plane];
            for c in 0..g.channels {
                let gi_c = &mut gi[c * hw..(c + 1) * hw];
                for ki in 0..g.kh {
                    let rows = g.rows(ki);
                    for kj in 0..g.kw {
                        let w = kernel[((f * g.channels + c) * g.kh + ki) * g.kw + kj];
                        if w == 0.0 {
                            continue;
                        }
                        let cols = g.cols(kj);
                        for oy in rows.clone() {
                            let iy = oy + ki - g.ph;
                            let dst = &mut gi_c[iy * g.width + cols.start + kj - g.pw..][..cols.len()];
                            let gsrc = &go[oy * wo + cols.start..][..cols.len()];
                            for (d, s) in dst.iter_mut().zip(gsrc) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[m, k] x [k, n] -> [m, n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `grad_a += grad_out * b^T`
pub(crate) fn matmul_grad_a(grad_out: &[f64], b: &[f64], m: usize, k: usize, n: usize, ga: &mut [f64]) {
    for i in 0..m {
        let go = &grad_out[i * n..(i + 1) * n];
        for p in 0..k {
            ga[i * k + p] += go.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `grad_b += a^T * grad_out`
pub(crate) fn matmul_grad_b(grad_out: &[f64], a: &[f64], m: usize, k: usize, n: usize, gb: &mut [f64]) {
    for i in 0..m {
        let go = &grad_out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (d, s) in gb[p * n..(p + 1) * n].iter_mut().zip(go) {
                *d += av * s;
            }
        }
    }
}
