//! Direct (non-im2col) convolution kernels on `[C, H, W]` feature maps.
//!
//! Filters are `[N, C, kh, kw]` for the forward convolution and
//! `[C, N, kh, kw]` for the transposed convolution, so the same filter data
//! serves as the adjoint of the other operator.

use crate::error::{Error, Result};

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent of a strided convolution, or `None` when it would be empty.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution, or `None` when non-positive.
pub fn conv_t_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel + output_pad;
    if full <= 2 * pad {
        return None;
    }
    Some(full - 2 * pad)
}

impl ConvGeom {
    /// Geometry for `conv2d(input [C,H,W], filters [N,C,kh,kw])`.
    pub fn conv2d(input: &[usize], filters: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 3 || filters.len() != 4 || filters[1] != input[0] {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: filters.to_vec(),
            });
        }
        let (kh, kw) = (filters[2], filters[3]);
        let geometry = |detail: String| Error::Geometry {
            op: "conv2d",
            detail,
        };
        if stride == 0 {
            return Err(geometry("stride must be positive".into()));
        }
        let out_h = conv_out_extent(input[1], kh, stride, pad)
            .ok_or_else(|| geometry(format!("height {} with kernel {kh}", input[1])))?;
        let out_w = conv_out_extent(input[2], kw, stride, pad)
            .ok_or_else(|| geometry(format!("width {} with kernel {kw}", input[2])))?;
        Ok(ConvGeom {
            in_channels: input[0],
            in_h: input[1],
            in_w: input[2],
            out_channels: filters[0],
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    /// Geometry for `conv2d_transpose(input [C,H,W], filters [C,N,kh,kw])`.
    pub fn conv2d_transpose(
        input: &[usize],
        filters: &[usize],
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Self> {
        if input.len() != 3 || filters.len() != 4 || filters[0] != input[0] {
            return Err(Error::Dimension {
                op: "conv2d_transpose",
                lhs: input.to_vec(),
                rhs: filters.to_vec(),
            });
        }
        let (kh, kw) = (filters[2], filters[3]);
        let geometry = |detail: String| Error::Geometry {
            op: "conv2d_transpose",
            detail,
        };
        if stride == 0 {
            return Err(geometry("stride must be positive".into()));
        }
        if output_pad >= stride {
            return Err(geometry(format!(
                "output padding {output_pad} must be smaller than stride {stride}"
            )));
        }
        let out_h = conv_t_out_extent(input[1], kh, stride, pad, output_pad)
            .ok_or_else(|| geometry(format!("height {} with kernel {kh}", input[1])))?;
        let out_w = conv_t_out_extent(input[2], kw, stride, pad, output_pad)
            .ok_or_else(|| geometry(format!("width {} with kernel {kw}", input[2])))?;
        Ok(ConvGeom {
            in_channels: input[0],
            in_h: input[1],
            in_w: input[2],
            out_channels: filters[1],
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_h, self.out_w]
    }
}

/// Indices `i in [0, count)` with `i*stride + offset - pad` inside `[0, len)`.
#[inline]
fn valid_range(count: usize, stride: usize, offset: usize, pad: usize, len: usize) -> (usize, usize) {
    let (s, off, p, len) = (stride as isize, offset as isize, pad as isize, len as isize);
    // i*s >= p - off
    let lo = if p > off { (p - off + s - 1) / s } else { 0 };
    // i*s <= len - 1 + p - off
    let top = len - 1 + p - off;
    let hi = if top < 0 { 0 } else { top / s + 1 };
    let lo = lo.clamp(0, count as isize) as usize;
    let hi = hi.clamp(0, count as isize) as usize;
    (lo, hi.max(lo))
}

/// Forward cross-correlation. `out` must be `[N, out_h, out_w]`.
pub fn conv2d_forward(g: &ConvGeom, input: &[f64], filters: &[f64], bias: &[f64], out: &mut [f64]) {
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (s, p) = (g.stride, g.pad);
    for n in 0..g.out_channels {
        let plane = &mut out[n * oh * ow..(n + 1) * oh * ow];
        plane.fill(bias[n]);
        for c in 0..g.in_channels {
            let src = &input[c * ih * iw..(c + 1) * ih * iw];
            let wbase = (n * g.in_channels + c) * g.kh * g.kw;
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(oh, s, ky, p, ih);
                for kx in 0..g.kw {
                    let wv = filters[wbase + ky * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_range(ow, s, kx, p, iw);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let row = &src[iy * iw..(iy + 1) * iw];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kx - p;
                            let len = ox_hi - ox_lo;
                            for (o, i) in orow[ox_lo..ox_hi].iter_mut().zip(&row[ix0..ix0 + len]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of [`conv2d_forward`]. Each gradient buffer is accumulated
/// into when present.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    filters: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_filters: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (s, p) = (g.stride, g.pad);
    if let Some(gb) = grad_bias {
        for n in 0..g.out_channels {
            gb[n] += grad_out[n * oh * ow..(n + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    let mut grad_input = grad_input;
    let mut grad_filters = grad_filters;
    if grad_input.is_none() && grad_filters.is_none() {
        return;
    }
    for n in 0..g.out_channels {
        let gplane = &grad_out[n * oh * ow..(n + 1) * oh * ow];
        for c in 0..g.in_channels {
            let src = &input[c * ih * iw..(c + 1) * ih * iw];
            let wbase = (n * g.in_channels + c) * g.kh * g.kw;
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(oh, s, ky, p, ih);
                for kx in 0..g.kw {
                    let (ox_lo, ox_hi) = valid_range(ow, s, kx, p, iw);
                    let wv = filters[wbase + ky * g.kw + kx];
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        if grad_filters.is_some() {
                            let row = &src[iy * iw..(iy + 1) * iw];
                            for ox in ox_lo..ox_hi {
                                acc += grow[ox] * row[ox * s + kx - p];
                            }
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            if wv != 0.0 {
                                let dst = &mut gi[c * ih * iw + iy * iw..c * ih * iw + (iy + 1) * iw];
                                for ox in ox_lo..ox_hi {
                                    dst[ox * s + kx - p] += wv * grow[ox];
                                }
                            }
                        }
                    }
                    if let Some(gf) = grad_filters.as_deref_mut() {
                        gf[wbase + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Forward transposed convolution (fractionally strided). `out` must be
/// `[N, out_h, out_w]`.
pub fn conv2d_transpose_forward(
    g: &ConvGeom,
    input: &[f64],
    filters: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (s, p) = (g.stride, g.pad);
    for n in 0..g.out_channels {
        out[n * oh * ow..(n + 1) * oh * ow].fill(bias[n]);
    }
    for c in 0..g.in_channels {
        let src = &input[c * ih * iw..(c + 1) * ih * iw];
        for n in 0..g.out_channels {
            let wbase = (c * g.out_channels + n) * g.kh * g.kw;
            let plane = &mut out[n * oh * ow..(n + 1) * oh * ow];
            for ky in 0..g.kh {
                let (iy_lo, iy_hi) = valid_range(ih, s, ky, p, oh);
                for kx in 0..g.kw {
                    let wv = filters[wbase + ky * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ix_lo, ix_hi) = valid_range(iw, s, kx, p, ow);
                    for iy in iy_lo..iy_hi {
                        let oy = iy * s + ky - p;
                        let row = &src[iy * iw..(iy + 1) * iw];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        for ix in ix_lo..ix_hi {
                            orow[ix * s + kx - p] += wv * row[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of [`conv2d_transpose_forward`].
pub fn conv2d_transpose_backward(
    g: &ConvGeom,
    input: &[f64],
    filters: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_filters: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (s, p) = (g.stride, g.pad);
    if let Some(gb) = grad_bias {
        for n in 0..g.out_channels {
            gb[n] += grad_out[n * oh * ow..(n + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    let mut grad_input = grad_input;
    let mut grad_filters = grad_filters;
    if grad_input.is_none() && grad_filters.is_none() {
        return;
    }
    for c in 0..g.in_channels {
        let src = &input[c * ih * iw..(c + 1) * ih * iw];
        for n in 0..g.out_channels {
            let wbase = (c * g.out_channels + n) * g.kh * g.kw;
            let gplane = &grad_out[n * oh * ow..(n + 1) * oh * ow];
            for ky in 0..g.kh {
                let (iy_lo, iy_hi) = valid_range(ih, s, ky, p, oh);
                for kx in 0..g.kw {
                    let (ix_lo, ix_hi) = valid_range(iw, s, kx, p, ow);
                    let wv = filters[wbase + ky * g.kw + kx];
                    let mut acc = 0.0;
                    for iy in iy_lo..iy_hi {
                        let oy = iy * s + ky - p;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        if grad_filters.is_some() {
                            let row = &src[iy * iw..(iy + 1) * iw];
                            for ix in ix_lo..ix_hi {
                                acc += row[ix] * grow[ix * s + kx - p];
                            }
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            if wv != 0.0 {
                                let dst = &mut gi[c * ih * iw + iy * iw..c * ih * iw + (iy + 1) * iw];
                                for ix in ix_lo..ix_hi {
                                    dst[ix] += wv * grow[ix * s + kx - p];
                                }
                            }
                        }
                    }
                    if let Some(gf) = grad_filters.as_deref_mut() {
                        gf[wbase + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}
