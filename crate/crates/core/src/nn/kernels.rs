//! Forward and backward kernels on raw buffers. The graph in `graph.rs` owns
//! bookkeeping; everything here is a pure function of its arguments.

use super::tensor::{gemm, Element, Shape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::dim("convolution stride must be at least 1"));
        }
        if weight.height != weight.width {
            return Err(Error::dim(format!("kernel {weight} is not square")));
        }
        if weight.channels != input.channels {
            return Err(Error::dim(format!(
                "kernel expects {} input channels, input {input} has {}",
                weight.channels, input.channels
            )));
        }
        let k = weight.height;
        let padded_h = input.height + 2 * padding;
        let padded_w = input.width + 2 * padding;
        if padded_h < k || padded_w < k {
            return Err(Error::dim(format!("kernel {k}x{k} larger than padded input {padded_h}x{padded_w}")));
        }
        Ok(ConvGeometry {
            cin: input.channels,
            cout: weight.batch,
            height: input.height,
            width: input.width,
            kernel: k,
            stride,
            padding,
            out_height: (padded_h - k) / stride + 1,
            out_width: (padded_w - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfolds one batch item (`cin x h x w`) into a `(cin*k*k) x (ho*wo)` matrix.
fn im2col<T: Element>(input: &[T], g: &ConvGeometry, col: &mut [T]) {
    let (ho, wo, k) = (g.out_height, g.out_width, g.kernel);
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image buffer.
fn col2im<T: Element>(col: &[T], g: &ConvGeometry, out: &mut [T]) {
    let (ho, wo, k) = (g.out_height, g.out_width, g.kernel);
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(input: &[T], batch: usize, weight: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let in_item = g.cin * g.height * g.width;
    let out_item = g.cout * g.col_cols();
    let mut out = vec![T::zero(); batch * out_item];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.col_cols()]
    };
    for b in 0..batch {
        let x = &input[b * in_item..(b + 1) * in_item];
        let y = &mut out[b * out_item..(b + 1) * out_item];
        let beta = match bias {
            Some(bias) => {
                for (co, chunk) in y.chunks_mut(g.col_cols()).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bias[co]);
                }
                T::one()
            }
            None => T::zero(),
        };
        if g.is_pointwise() {
            gemm(g.cout, g.cin, g.col_cols(), weight, false, x, false, beta, y);
        } else {
            im2col(x, g, &mut col);
            gemm(g.cout, g.col_rows(), g.col_cols(), weight, false, &col, false, beta, y);
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    input: &[T],
    batch: usize,
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let in_item = g.cin * g.height * g.width;
    let out_item = g.cout * g.col_cols();
    let mut grad_input = need_input.then(|| vec![T::zero(); batch * in_item]);
    let mut grad_weight = need_weight.then(|| vec![T::zero(); g.cout * g.col_rows()]);
    let mut grad_bias = need_bias.then(|| vec![T::zero(); g.cout]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.col_cols()]
    };
    // Batch items are reduced in index order so results do not depend on threading.
    for b in 0..batch {
        let x = &input[b * in_item..(b + 1) * in_item];
        let dy = &grad_out[b * out_item..(b + 1) * out_item];
        if let Some(db) = grad_bias.as_mut() {
            for (co, chunk) in dy.chunks(g.col_cols()).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = grad_weight.as_mut() {
            if g.is_pointwise() {
                gemm(g.cout, g.col_cols(), g.cin, dy, false, x, true, T::one(), dw);
            } else {
                im2col(x, g, &mut col);
                gemm(g.cout, g.col_cols(), g.col_rows(), dy, false, &col, true, T::one(), dw);
            }
        }
        if let Some(dx) = grad_input.as_mut() {
            let dx = &mut dx[b * in_item..(b + 1) * in_item];
            if g.is_pointwise() {
                gemm(g.cin, g.cout, g.col_cols(), weight, true, dy, false, T::one(), dx);
            } else {
                gemm(g.col_rows(), g.cout, g.col_cols(), weight, true, dy, false, T::zero(), &mut col);
                col2im(&col, g, dx);
            }
        }
    }
    ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    }
}

/// 2x2 max pooling, stride 2. Returns the pooled values and, per output, the
/// flat input index that won (first in row-major scan on ties).
pub(crate) fn maxpool2x2_forward<T: Element>(input: &[T], shape: Shape) -> Result<(Vec<T>, Vec<u32>)> {
    if !shape.height.is_multiple_of(2) || !shape.width.is_multiple_of(2) {
        return Err(Error::dim(format!("max pooling needs even spatial dims, got {shape}")));
    }
    if input.len() > u32::MAX as usize {
        return Err(Error::dim("tensor too large for pooling indices"));
    }
    let (h, w) = (shape.height, shape.width);
    let (oh, ow) = (h / 2, w / 2);
    let planes = shape.batch * shape.channels;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * w + 2 * ox;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    Ok((out, argmax))
}

/// Per-axis sampling table for align-corners-false bilinear resizing.
#[derive(Clone, Debug)]
pub(crate) struct ResizeAxis {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl ResizeAxis {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for d in 0..dst {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i1 == i0 { 0.0 } else { s - i0 as f64 });
        }
        ResizeAxis { lo, hi, frac }
    }
}

pub(crate) fn resize_forward<T: Element>(input: &[T], shape: Shape, out_h: usize, out_w: usize) -> Vec<T> {
    let ay = ResizeAxis::new(shape.height, out_h);
    let ax = ResizeAxis::new(shape.width, out_w);
    let planes = shape.batch * shape.channels;
    let (h, w) = (shape.height, shape.width);
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        for oy in 0..out_h {
            let fy = T::from_f64(ay.frac[oy]);
            let r0 = &src[ay.lo[oy] * w..(ay.lo[oy] + 1) * w];
            let r1 = &src[ay.hi[oy] * w..(ay.hi[oy] + 1) * w];
            for ox in 0..out_w {
                let fx = T::from_f64(ax.frac[ox]);
                let (x0, x1) = (ax.lo[ox], ax.hi[ox]);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    out
}

pub(crate) fn resize_backward<T: Element>(grad_out: &[T], in_shape: Shape, out_h: usize, out_w: usize) -> Vec<T> {
    let ay = ResizeAxis::new(in_shape.height, out_h);
    let ax = ResizeAxis::new(in_shape.width, out_w);
    let planes = in_shape.batch * in_shape.channels;
    let (h, w) = (in_shape.height, in_shape.width);
    let mut grad_in = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut grad_in[p * h * w..(p + 1) * h * w];
        let src = &grad_out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for oy in 0..out_h {
            let fy = T::from_f64(ay.frac[oy]);
            let (y0, y1) = (ay.lo[oy], ay.hi[oy]);
            for ox in 0..out_w {
                let fx = T::from_f64(ax.frac[ox]);
                let (x0, x1) = (ax.lo[ox], ax.hi[ox]);
                let g = src[oy * out_w + ox];
                let gy0 = g * (T::one() - fy);
                let gy1 = g * fy;
                dst[y0 * w + x0] += gy0 * (T::one() - fx);
                dst[y0 * w + x1] += gy0 * fx;
                dst[y1 * w + x0] += gy1 * (T::one() - fx);
                dst[y1 * w + x1] += gy1 * fx;
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn naive_conv(x: &[f64], s: Shape, w: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
        let ho = (s.height + 2 * pad - k) / stride + 1;
        let wo = (s.width + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; s.batch * cout * ho * wo];
        for b in 0..s.batch {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..s.channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                        continue;
                                    }
                                    let xv = x[((b * s.channels + ci) * s.height + iy as usize) * s.width + ix as usize];
                                    let wv = w[((co * s.channels + ci) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((b * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_naive_for_strides_and_padding() {
        let s = Shape::new(2, 3, 7, 6);
        let x: Vec<f64> = (0..s.numel()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (3, 1, 0), (1, 1, 0), (1, 2, 0), (3, 3, 2)] {
            let ws = Shape::new(4, 3, k, k);
            let w: Vec<f64> = (0..ws.numel()).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.5).collect();
            let g = ConvGeometry::new(s, ws, stride, pad).unwrap();
            let got = conv2d_forward(&x, s.batch, &w, None, &g);
            let want = naive_conv(&x, s, &w, 4, k, stride, pad);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "k={k} stride={stride} pad={pad}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let s = Shape::new(1, 2, 5, 4);
        let g = ConvGeometry::new(s, Shape::new(1, 2, 3, 3), 2, 1).unwrap();
        let x: Vec<f64> = (0..s.numel()).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_rejects_odd_dims_and_breaks_ties_first() {
        assert!(maxpool2x2_forward(&[0.0f32; 6], Shape::new(1, 1, 3, 2)).is_err());
        let (out, idx) = maxpool2x2_forward(&[5.0f32, 5.0, 5.0, 5.0], Shape::new(1, 1, 2, 2)).unwrap();
        assert_eq!(out, vec![5.0]);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn resize_axis_identity_when_sizes_match() {
        let a = ResizeAxis::new(5, 5);
        assert_eq!(a.lo, vec![0, 1, 2, 3, 4]);
        assert!(a.frac.iter().all(|&f| f == 0.0));
    }
}
