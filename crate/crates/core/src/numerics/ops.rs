//! Forward and backward kernels for the network primitives.
//!
//! Every kernel works on single images laid out as `[C, H, W]`. The `*_backward`
//! functions take whatever the forward pass cached and return gradients with
//! respect to each input.

use crate::error::{Error, Result};

use super::Tensor;

/// Output geometry of a 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (c_in, h, w) = input.chw()?;
        let (c_out, k_cin, kh, kw) = match kernel.shape() {
            &[a, b, c, d] => (a, b, c, d),
            other => {
                return Err(Error::dim(
                    "kernel",
                    format!("expected [C_out,C_in,kH,kW], got {other:?}"),
                ))
            }
        };
        if k_cin != c_in {
            return Err(Error::dim(
                "channels",
                format!("input has {c_in} channels, kernel expects {k_cin}"),
            ));
        }
        if bias.shape() != [c_out] {
            return Err(Error::dim(
                "bias",
                format!("expected [{c_out}], got {:?}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("stride", "stride must be at least 1"));
        }
        if kh > h + 2 * pad {
            return Err(Error::dim(
                "height",
                format!("kernel {kh} exceeds padded height {}", h + 2 * pad),
            ));
        }
        if kw > w + 2 * pad {
            return Err(Error::dim(
                "width",
                format!("kernel {kw} exceeds padded width {}", w + 2 * pad),
            ));
        }
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `c = beta * c + a * b` for row-major matrices, with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the bounds above cover every index dgemm touches given these strides.
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

fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let p = g.out_pixels();
    let mut col = vec![0.0; g.patch_len() * p];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.out_w + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let p = g.out_pixels();
    let mut out = vec![0.0; g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-d cross-correlation with zero padding. Returns the output and the im2col
/// buffer the backward pass needs.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f64>, ConvGeometry)> {
    let g = ConvGeometry::new(input, kernel, bias, stride, pad)?;
    let col = im2col(input.values(), &g);
    let p = g.out_pixels();
    let mut out = vec![0.0; g.c_out * p];
    for (co, chunk) in out.chunks_mut(p).enumerate() {
        chunk.fill(bias.values()[co]);
    }
    gemm(
        g.c_out,
        g.patch_len(),
        p,
        kernel.values(),
        false,
        &col,
        false,
        1.0,
        &mut out,
    );
    let out = Tensor::new(vec![g.c_out, g.out_h, g.out_w], out)?;
    Ok((out, col, g))
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    g: &ConvGeometry,
    col: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> ConvGrads {
    let p = g.out_pixels();
    let kk = g.patch_len();
    let mut grad_kernel = vec![0.0; g.c_out * kk];
    gemm(
        g.c_out,
        p,
        kk,
        grad_out,
        false,
        col,
        true,
        0.0,
        &mut grad_kernel,
    );
    let grad_bias = grad_out.chunks(p).map(|c| c.iter().sum()).collect();
    let input = need_input.then(|| {
        let mut dcol = vec![0.0; kk * p];
        gemm(
            kk, g.c_out, p, kernel, true, grad_out, false, 0.0, &mut dcol,
        );
        col2im(&dcol, g)
    });
    ConvGrads {
        input,
        kernel: grad_kernel,
        bias: grad_bias,
    }
}

pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    conv2d_forward(input, kernel, bias, stride, pad).map(|(out, _, _)| out)
}

/// Elementwise `max(0, x)`. The subgradient at exactly zero is zero.
pub fn relu(input: &Tensor) -> Tensor {
    let values = input.values().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), values).expect("shape preserved")
}

pub fn relu_backward(input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// 2x2 non-overlapping max pooling. Returns the output and, per output
/// element, the flat input index that won. Ties go to the first element in
/// row-major window order.
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 {
        return Err(Error::dim(
            "height",
            format!("maxpool2 needs even height, got {h}"),
        ));
    }
    if w % 2 != 0 {
        return Err(Error::dim(
            "width",
            format!("maxpool2 needs even width, got {w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.values();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    maxpool2_forward(input).map(|(t, _)| t)
}

pub fn maxpool2_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        grad[idx] += g;
    }
    grad
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.values();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &x[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn upsample_nearest2_backward(c: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let ow = 2 * w;
    let mut grad = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..ow {
                grad[(ch * h + y / 2) * w + x / 2] += grad_out[(ch * 2 * h + y) * ow + x];
            }
        }
    }
    grad
}

/// `weight · input + bias` for a single vector.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = match input.shape() {
        &[d] => d,
        other => return Err(Error::dim("input", format!("expected [D], got {other:?}"))),
    };
    let k = match weight.shape() {
        &[k, wd] if wd == d => k,
        other => {
            return Err(Error::dim(
                "weight",
                format!("expected [K,{d}], got {other:?}"),
            ))
        }
    };
    if bias.shape() != [k] {
        return Err(Error::dim(
            "bias",
            format!("expected [{k}], got {:?}", bias.shape()),
        ));
    }
    let x = input.values();
    let out = weight
        .values()
        .chunks(d)
        .zip(bias.values())
        .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect();
    Tensor::new(vec![k], out)
}

/// Returns gradients for (input, weight, bias).
pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = input.len();
    let mut grad_in = vec![0.0; d];
    let mut grad_w = vec![0.0; weight.len()];
    for (k, &g) in grad_out.iter().enumerate() {
        let row = &weight[k * d..(k + 1) * d];
        for j in 0..d {
            grad_in[j] += g * row[j];
            grad_w[k * d + j] = g * input[j];
        }
    }
    (grad_in, grad_w, grad_out.to_vec())
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let n = (h * w) as f64;
    let out = input
        .values()
        .chunks(h * w)
        .map(|p| p.iter().sum::<f64>() / n)
        .collect();
    Tensor::new(vec![c], out)
}

pub fn global_avg_pool_backward(c: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let n = (h * w) as f64;
    let mut grad = Vec::with_capacity(c * h * w);
    for &g in grad_out.iter().take(c) {
        grad.extend(std::iter::repeat_n(g / n, h * w));
    }
    grad
}

/// Per-pixel softmax over a two-channel map.
pub fn pixel_softmax(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if c != 2 {
        return Err(Error::dim(
            "channels",
            format!("pixel_softmax needs 2 channels, got {c}"),
        ));
    }
    let hw = h * w;
    let (l0, l1) = input.values().split_at(hw);
    let mut out = vec![0.0; 2 * hw];
    for p in 0..hw {
        // logistic form avoids overflow for large logit gaps
        let fg = 1.0 / (1.0 + (l0[p] - l1[p]).exp());
        let bg = 1.0 / (1.0 + (l1[p] - l0[p]).exp());
        out[p] = bg;
        out[hw + p] = fg;
    }
    Tensor::new(vec![2, h, w], out)
}

pub fn pixel_softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let hw = probs.len() / 2;
    let mut grad = vec![0.0; probs.len()];
    for p in 0..hw {
        let (s0, s1) = (probs[p], probs[hw + p]);
        let (g0, g1) = (grad_out[p], grad_out[hw + p]);
        let dot = s0 * g0 + s1 * g1;
        grad[p] = s0 * (g0 - dot);
        grad[hw + p] = s1 * (g1 - dot);
    }
    grad
}

/// Stacks two `[C,H,W]` maps along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if ha != hb {
        return Err(Error::dim(
            "height",
            format!("cannot concat heights {ha} and {hb}"),
        ));
    }
    if wa != wb {
        return Err(Error::dim(
            "width",
            format!("cannot concat widths {wa} and {wb}"),
        ));
    }
    let mut values = Vec::with_capacity(a.len() + b.len());
    values.extend_from_slice(a.values());
    values.extend_from_slice(b.values());
    Tensor::new(vec![ca + cb, ha, wa], values)
}

/// Bilinear resize of a single-channel `h x w` map to `out_h x out_w`
/// using pixel-centre alignment with edge clamping.
pub fn resize_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = axis(ox, sx, w);
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}
