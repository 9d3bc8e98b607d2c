//! Dense kernels for the fixed toy architecture. Feature maps are stored
//! channel-major, `C x H x W`, contiguous.

/// Shape of a channel-major feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn size(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Offsets of the valid output/input columns for a kernel tap at `d`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// `weights` is `[cout][cin][3][3]`.
pub fn conv3x3_forward(
    input: &[f64],
    dims: Dims,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
    out: &mut [f64],
) {
    let (h, w, cin) = (dims.h, dims.w, dims.c);
    let plane = dims.plane();
    debug_assert_eq!(out.len(), cout * plane);
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let kern = &weights[(o * cin + i) * 9..(o * cin + i) * 9 + 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(w, dx);
                    let k = kern[ky * 3 + kx];
                    if k == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let d = &mut dst[y * w + x0..y * w + x1];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += k * sv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of the convolution w.r.t. its input, accumulated into `grad_in`.
pub fn conv3x3_backward_input(
    grad_out: &[f64],
    dims: Dims,
    weights: &[f64],
    cout: usize,
    grad_in: &mut [f64],
) {
    let (h, w, cin) = (dims.h, dims.w, dims.c);
    let plane = dims.plane();
    for o in 0..cout {
        let g = &grad_out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let dst = &mut grad_in[i * plane..(i + 1) * plane];
            let kern = &weights[(o * cin + i) * 9..(o * cin + i) * 9 + 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(w, dx);
                    let k = kern[ky * 3 + kx];
                    if k == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &g[y * w + x0..y * w + x1];
                        let d = &mut dst[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        for (dv, gv) in d.iter_mut().zip(src) {
                            *dv += k * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. weights and bias, accumulated into `grad_w` / `grad_b`.
pub fn conv3x3_backward_params(
    grad_out: &[f64],
    input: &[f64],
    dims: Dims,
    cout: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let (h, w, cin) = (dims.h, dims.w, dims.c);
    let plane = dims.plane();
    for o in 0..cout {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += g.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let gr = &g[y * w + x0..y * w + x1];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_w[(o * cin + i) * 9 + ky * 3 + kx] += acc;
                }
            }
        }
    }
}

/// Output dims of 2x2 average pooling (trailing odd row/column dropped).
pub fn pooled(dims: Dims) -> Dims {
    Dims {
        c: dims.c,
        h: dims.h / 2,
        w: dims.w / 2,
    }
}

pub fn avgpool2_forward(input: &[f64], dims: Dims, out: &mut [f64]) {
    let od = pooled(dims);
    for c in 0..dims.c {
        let src = &input[c * dims.plane()..];
        let dst = &mut out[c * od.plane()..(c + 1) * od.plane()];
        for y in 0..od.h {
            let r0 = &src[2 * y * dims.w..];
            let r1 = &src[(2 * y + 1) * dims.w..];
            for x in 0..od.w {
                dst[y * od.w + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
}

/// Spreads each pooled gradient equally over its 2x2 window; dropped
/// rows/columns receive zero.
pub fn avgpool2_backward(grad_out: &[f64], dims: Dims, grad_in: &mut [f64]) {
    let od = pooled(dims);
    grad_in.fill(0.0);
    for c in 0..dims.c {
        let g = &grad_out[c * od.plane()..(c + 1) * od.plane()];
        let dst = &mut grad_in[c * dims.plane()..(c + 1) * dims.plane()];
        for y in 0..od.h {
            for x in 0..od.w {
                let v = 0.25 * g[y * od.w + x];
                let a = 2 * y * dims.w + 2 * x;
                let b = a + dims.w;
                dst[a] = v;
                dst[a + 1] = v;
                dst[b] = v;
                dst[b + 1] = v;
            }
        }
    }
}
