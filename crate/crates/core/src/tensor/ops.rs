//! Float reference implementations of the layer operations.
//!
//! These are the ground truth the quantized engine and the streaming
//! simulator are checked against. Accumulation is f32; all functions are
//! pure and reentrant.

use super::{Tensor, TensorShape};
use crate::error::{Error, Result};

/// 3x3 convolution, stride 1, zero padding 1, no bias.
/// Weights are laid out [out_c, in_c, 3, 3].
pub fn conv3x3(input: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let x = input.as_f32()?;
    let w = weights.as_f32()?;
    let (is, ws) = (input.shape, weights.shape);
    if ws.h != 3 || ws.w != 3 {
        return Err(Error::Shape(format!("conv3x3 weights must be [o,i,3,3], got {ws}")));
    }
    if ws.c != is.c {
        return Err(Error::Shape(format!(
            "conv3x3 channel mismatch: input has {} channels, weights expect {}",
            is.c, ws.c
        )));
    }
    let (out_c, in_c, h, w_dim) = (ws.n, ws.c, is.h, is.w);
    let out_shape = TensorShape::new(is.n, out_c, h, w_dim);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    for n in 0..is.n {
        for oc in 0..out_c {
            for y in 0..h {
                for xpos in 0..w_dim {
                    let mut acc = 0.0f32;
                    for ic in 0..in_c {
                        for ky in 0..3 {
                            let iy = y as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = xpos as isize + kx as isize - 1;
                                if ix < 0 || ix >= w_dim as isize {
                                    continue;
                                }
                                acc += x[is.index(n, ic, iy as usize, ix as usize)]
                                    * w[ws.index(oc, ic, ky, kx)];
                            }
                        }
                    }
                    out[out_shape.index(n, oc, y, xpos)] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}

/// 1x1 convolution, optional bias. Weights are [out_c, in_c, 1, 1].
pub fn conv1x1(input: &Tensor, weights: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let x = input.as_f32()?;
    let w = weights.as_f32()?;
    let (is, ws) = (input.shape, weights.shape);
    if ws.h != 1 || ws.w != 1 {
        return Err(Error::Shape(format!("conv1x1 weights must be [o,i,1,1], got {ws}")));
    }
    if ws.c != is.c {
        return Err(Error::Shape(format!(
            "conv1x1 channel mismatch: input has {} channels, weights expect {}",
            is.c, ws.c
        )));
    }
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(Error::Shape(format!(
                "conv1x1 bias length {} does not match {} output channels",
                b.len(),
                ws.n
            )));
        }
    }
    let out_shape = TensorShape::new(is.n, ws.n, is.h, is.w);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    for n in 0..is.n {
        for oc in 0..ws.n {
            let b = bias.map_or(0.0, |b| b[oc]);
            for y in 0..is.h {
                for xpos in 0..is.w {
                    let mut acc = b;
                    for ic in 0..is.c {
                        acc += x[is.index(n, ic, y, xpos)] * w[ws.index(oc, ic, 0, 0)];
                    }
                    out[out_shape.index(n, oc, y, xpos)] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}

/// Inference-mode batch normalization with per-channel parameters.
pub fn batch_norm(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let x = input.as_f32()?;
    let s = input.shape;
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&l| l != s.c) {
        return Err(Error::Shape(format!("batch_norm parameter vectors must have length {}", s.c)));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidParam(format!("batch_norm eps must be > 0, got {eps}")));
    }
    if let Some(v) = var.iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidParam(format!("batch_norm variance must be >= 0, got {v}")));
    }
    let mut out = vec![0.0f32; s.num_elements()];
    for n in 0..s.n {
        for c in 0..s.c {
            let inv_std = 1.0 / (var[c] + eps).sqrt();
            let (g, b, m) = (gamma[c], beta[c], mean[c]);
            for y in 0..s.h {
                for xpos in 0..s.w {
                    let i = s.index(n, c, y, xpos);
                    out[i] = g * (x[i] - m) * inv_std + b;
                }
            }
        }
    }
    Ok(Tensor::from_f32(s, out))
}

pub fn relu(input: &Tensor) -> Result<Tensor> {
    let x = input.as_f32()?;
    Ok(Tensor::from_f32(input.shape, x.iter().map(|&v| v.max(0.0)).collect()))
}

/// 2x2 max pooling, stride 2. Requires even spatial dimensions.
pub fn maxpool2x2(input: &Tensor) -> Result<Tensor> {
    let x = input.as_f32()?;
    let s = input.shape;
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Shape(format!("maxpool2x2 requires even spatial dims, got {s}")));
    }
    let out_shape = TensorShape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_shape.h {
                for xpos in 0..out_shape.w {
                    let a = x[s.index(n, c, 2 * y, 2 * xpos)];
                    let b = x[s.index(n, c, 2 * y, 2 * xpos + 1)];
                    let cc = x[s.index(n, c, 2 * y + 1, 2 * xpos)];
                    let d = x[s.index(n, c, 2 * y + 1, 2 * xpos + 1)];
                    out[out_shape.index(n, c, y, xpos)] = a.max(b).max(cc).max(d);
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample_nearest2x(input: &Tensor) -> Result<Tensor> {
    let x = input.as_f32()?;
    let s = input.shape;
    let out_shape = TensorShape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_shape.h {
                for xpos in 0..out_shape.w {
                    out[out_shape.index(n, c, y, xpos)] = x[s.index(n, c, y / 2, xpos / 2)];
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}

/// 2x2 transposed convolution, stride 2, with bias. Weights are laid out
/// [in_c, out_c, 2, 2]. Each output pixel receives exactly one kernel tap:
/// `out[y][x] = bias + sum_ic W[ic][oc][y%2][x%2] * in[ic][y/2][x/2]`.
pub fn tconv2x2(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let x = input.as_f32()?;
    let w = weights.as_f32()?;
    let (is, ws) = (input.shape, weights.shape);
    if ws.h != 2 || ws.w != 2 {
        return Err(Error::Shape(format!("tconv2x2 weights must be [i,o,2,2], got {ws}")));
    }
    if ws.n != is.c {
        return Err(Error::Shape(format!(
            "tconv2x2 channel mismatch: input has {} channels, weights expect {}",
            is.c, ws.n
        )));
    }
    let out_c = ws.c;
    if bias.len() != out_c {
        return Err(Error::Shape(format!(
            "tconv2x2 bias length {} does not match {out_c} output channels",
            bias.len()
        )));
    }
    let out_shape = TensorShape::new(is.n, out_c, is.h * 2, is.w * 2);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    for n in 0..is.n {
        for oc in 0..out_c {
            for y in 0..out_shape.h {
                for xpos in 0..out_shape.w {
                    let mut acc = bias[oc];
                    for ic in 0..is.c {
                        acc += w[ws.index(ic, oc, y % 2, xpos % 2)]
                            * x[is.index(n, ic, y / 2, xpos / 2)];
                    }
                    out[out_shape.index(n, oc, y, xpos)] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}

/// Channel concatenation: `a`'s channels first, then `b`'s.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xa = a.as_f32()?;
    let xb = b.as_f32()?;
    let (sa, sb) = (a.shape, b.shape);
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::Shape(format!("concat requires equal n/h/w, got {sa} vs {sb}")));
    }
    let out_shape = TensorShape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    for n in 0..sa.n {
        for c in 0..out_shape.c {
            for y in 0..sa.h {
                for xpos in 0..sa.w {
                    out[out_shape.index(n, c, y, xpos)] = if c < sa.c {
                        xa[sa.index(n, c, y, xpos)]
                    } else {
                        xb[sb.index(n, c - sa.c, y, xpos)]
                    };
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}

/// Temperature-scaled softmax over the channel axis, stabilized by
/// max-subtraction. Each pixel's channel distribution sums to one.
pub fn softmax_t(logits: &Tensor, temperature: f32) -> Result<Tensor> {
    if temperature <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "softmax temperature must be > 0, got {temperature}"
        )));
    }
    let x = logits.as_f32()?;
    let s = logits.shape;
    let mut out = vec![0.0f32; s.num_elements()];
    for n in 0..s.n {
        for y in 0..s.h {
            for xpos in 0..s.w {
                let mut max = f32::NEG_INFINITY;
                for c in 0..s.c {
                    max = max.max(x[s.index(n, c, y, xpos)] / temperature);
                }
                let mut sum = 0.0f32;
                for c in 0..s.c {
                    let e = ((x[s.index(n, c, y, xpos)] / temperature) - max).exp();
                    out[s.index(n, c, y, xpos)] = e;
                    sum += e;
                }
                for c in 0..s.c {
                    out[s.index(n, c, y, xpos)] /= sum;
                }
            }
        }
    }
    Ok(Tensor::from_f32(s, out))
}

/// Bilinear resize with the align-corners=false (half-pixel centers)
/// convention. Resizing to the same size is the identity.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("bilinear_resize output dims must be >= 1".into()));
    }
    let x = input.as_f32()?;
    let s = input.shape;
    let out_shape = TensorShape::new(s.n, s.c, out_h, out_w);
    let mut out = vec![0.0f32; out_shape.num_elements()];
    let sy = s.h as f32 / out_h as f32;
    let sx = s.w as f32 / out_w as f32;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_h {
                let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (s.h - 1) as f32);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(s.h - 1);
                let wy = fy - y0 as f32;
                for xpos in 0..out_w {
                    let fx = ((xpos as f32 + 0.5) * sx - 0.5).clamp(0.0, (s.w - 1) as f32);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(s.w - 1);
                    let wx = fx - x0 as f32;
                    let v00 = x[s.index(n, c, y0, x0)];
                    let v01 = x[s.index(n, c, y0, x1)];
                    let v10 = x[s.index(n, c, y1, x0)];
                    let v11 = x[s.index(n, c, y1, x1)];
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    out[out_shape.index(n, c, y, xpos)] = top + (bot - top) * wy;
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape, out))
}
