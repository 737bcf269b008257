//! Integer-only execution of a quantized graph.
//!
//! All arithmetic until the final logits is exact integer work: i32
//! accumulation, fixed-point requantization, zero-point shift, clamp. The
//! per-pixel kernels here are also the computational core of the streaming
//! simulator, which guarantees the two paths agree bit for bit.

use super::requant::{apply as requant_apply, requantize_to_i8};
use super::{QConv, QNodeKind, QuantizedGraph};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, TensorShape};

/// Quantize a float input image with the graph's input-edge parameters.
pub fn quantize_input(qg: &QuantizedGraph, image: &Tensor) -> Result<Tensor> {
    let x = image.as_f32()?;
    let qp = qg.input_qp();
    let data: Vec<i8> = x.iter().map(|&v| qp.quantize_value(v)).collect();
    Ok(Tensor::from_i8(
        image.shape,
        data,
        crate::tensor::QuantParams::per_tensor(qp.scale, qp.zero_point, 8),
    ))
}

/// Per-node activation buffer.
#[derive(Debug, Clone)]
enum Buf {
    I8(Vec<i8>),
    F32(Vec<f32>),
}

/// Run the integer forward pass; returns f32 logits (n, classes, h, w).
/// The input must be int8 and quantized with the input edge's parameters.
pub fn integer_forward(qg: &QuantizedGraph, input: &Tensor) -> Result<Tensor> {
    if input.dtype() != DType::I8 {
        return Err(Error::InvalidParam(format!(
            "integer_forward expects an i8 input, got {:?}",
            input.dtype()
        )));
    }
    let in_qp = qg.input_qp();
    match &input.quant {
        Some(qp)
            if qp.scales[0] == in_qp.scale && qp.zero_points[0] == in_qp.zero_point => {}
        _ => {
            return Err(Error::InvalidParam(
                "input is not quantized with the graph's input-edge parameters".into(),
            ))
        }
    }
    let s = input.shape;
    if s.c != qg.config.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, model expects {}",
            s.c, qg.config.in_channels
        )));
    }
    if !s.h.is_multiple_of(16) || !s.w.is_multiple_of(16) {
        return Err(Error::Shape(format!("input {}x{} must be divisible by 16", s.h, s.w)));
    }

    let classes = qg.config.num_classes;
    let out_shape = TensorShape::new(s.n, classes, s.h, s.w);
    let mut logits = vec![0.0f32; out_shape.num_elements()];
    let x = input.as_i8()?;
    for n in 0..s.n {
        let plane = &x[n * s.c * s.h * s.w..(n + 1) * s.c * s.h * s.w];
        let out = forward_single(qg, plane, s.h, s.w)?;
        logits[n * classes * s.h * s.w..(n + 1) * classes * s.h * s.w].copy_from_slice(&out);
    }
    Ok(Tensor::from_f32(out_shape, logits))
}

fn forward_single(qg: &QuantizedGraph, input: &[i8], h: usize, w: usize) -> Result<Vec<f32>> {
    let n_nodes = qg.nodes.len();
    let mut bufs: Vec<Option<Buf>> = vec![None; n_nodes];
    let mut dims = vec![(0usize, 0usize); n_nodes];
    let mut last_use = vec![0usize; n_nodes];
    for (id, node) in qg.nodes.iter().enumerate() {
        for &src in &node.inputs {
            last_use[src] = last_use[src].max(id);
        }
    }

    for (id, node) in qg.nodes.iter().enumerate() {
        let (in_h, in_w) = if node.inputs.is_empty() { (h, w) } else { dims[node.inputs[0]] };
        let in_i8 = |slot: usize| -> &[i8] {
            match bufs[node.inputs[slot]].as_ref().unwrap() {
                Buf::I8(v) => v,
                Buf::F32(_) => unreachable!("integer ops consume i8 buffers"),
            }
        };
        let (buf, out_dims) = match &node.kind {
            QNodeKind::Input => (Buf::I8(input.to_vec()), (h, w)),
            QNodeKind::Relu => {
                let zp = node.out_qp.zero_point as i8;
                let v = in_i8(0).iter().map(|&q| q.max(zp)).collect();
                (Buf::I8(v), (in_h, in_w))
            }
            QNodeKind::MaxPool2x2 => {
                let src = in_i8(0);
                let c = node.in_channels;
                let (oh, ow) = (in_h / 2, in_w / 2);
                let mut v = vec![0i8; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let at = |dy: usize, dx: usize| {
                                src[ch * in_h * in_w + (2 * y + dy) * in_w + 2 * x + dx]
                            };
                            v[ch * oh * ow + y * ow + x] =
                                at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                        }
                    }
                }
                (Buf::I8(v), (oh, ow))
            }
            QNodeKind::UpsampleNearest2x => {
                let src = in_i8(0);
                let c = node.in_channels;
                let (oh, ow) = (in_h * 2, in_w * 2);
                let mut v = vec![0i8; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            v[ch * oh * ow + y * ow + x] =
                                src[ch * in_h * in_w + (y / 2) * in_w + x / 2];
                        }
                    }
                }
                (Buf::I8(v), (oh, ow))
            }
            QNodeKind::Concat { requant } => {
                let (a, b) = (in_i8(0), in_i8(1));
                let ca = qg.nodes[node.inputs[0]].out_channels;
                let cb = qg.nodes[node.inputs[1]].out_channels;
                let zp_a = qg.nodes[node.inputs[0]].out_qp.zero_point;
                let zp_b = qg.nodes[node.inputs[1]].out_qp.zero_point;
                let zp_out = node.out_qp.zero_point;
                let hw = in_h * in_w;
                let mut v = vec![0i8; (ca + cb) * hw];
                for ch in 0..ca {
                    for i in 0..hw {
                        v[ch * hw + i] =
                            concat_requant(a[ch * hw + i], zp_a, requant[0], zp_out);
                    }
                }
                for ch in 0..cb {
                    for i in 0..hw {
                        v[(ca + ch) * hw + i] =
                            concat_requant(b[ch * hw + i], zp_b, requant[1], zp_out);
                    }
                }
                (Buf::I8(v), (in_h, in_w))
            }
            QNodeKind::Conv3x3(conv) | QNodeKind::Conv1x1(conv) | QNodeKind::TConv2x2(conv) => {
                let kind = match &node.kind {
                    QNodeKind::Conv3x3(_) => ConvKind::K3x3,
                    QNodeKind::Conv1x1(_) => ConvKind::K1x1,
                    _ => ConvKind::TConv,
                };
                let src = in_i8(0);
                let zp_in = qg.nodes[node.inputs[0]].out_qp.zero_point;
                let get = |ic: usize, y: usize, x: usize| src[ic * in_h * in_w + y * in_w + x];
                let (oh, ow) = match kind {
                    ConvKind::TConv => (in_h * 2, in_w * 2),
                    _ => (in_h, in_w),
                };
                let oc = node.out_channels;
                if node.emits_f32 {
                    let mut v = vec![0.0f32; oc * oh * ow];
                    let mut pix = vec![0.0f32; oc];
                    for y in 0..oh {
                        for x in 0..ow {
                            conv_pixel_f32(kind, conv, zp_in, in_h, in_w, &get, y, x, &mut pix);
                            for (ch, &p) in pix.iter().enumerate() {
                                v[ch * oh * ow + y * ow + x] = p;
                            }
                        }
                    }
                    (Buf::F32(v), (oh, ow))
                } else {
                    let zp_out = node.out_qp.zero_point;
                    let mut v = vec![0i8; oc * oh * ow];
                    let mut pix = vec![0i8; oc];
                    for y in 0..oh {
                        for x in 0..ow {
                            conv_pixel_i8(
                                kind, conv, zp_in, zp_out, in_h, in_w, &get, y, x, &mut pix,
                            );
                            for (ch, &p) in pix.iter().enumerate() {
                                v[ch * oh * ow + y * ow + x] = p;
                            }
                        }
                    }
                    (Buf::I8(v), (oh, ow))
                }
            }
            QNodeKind::Output => {
                let buf = bufs[node.inputs[0]].clone().unwrap();
                (buf, (in_h, in_w))
            }
        };
        dims[id] = out_dims;
        bufs[id] = Some(buf);
        for &src in &node.inputs {
            if last_use[src] == id && src != id {
                bufs[src] = None;
            }
        }
        if matches!(node.kind, QNodeKind::Output) {
            return match bufs[id].take().unwrap() {
                Buf::F32(v) => Ok(v),
                Buf::I8(_) => {
                    Err(Error::Structure("output node received integer activations".into()))
                }
            };
        }
    }
    Err(Error::Structure("graph has no output node".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConvKind {
    K3x3,
    K1x1,
    TConv,
}

/// Requantize one concat input value into the shared output domain.
#[inline]
pub(crate) fn concat_requant(q: i8, zp_in: i32, r: super::Requant, zp_out: i32) -> i8 {
    (requant_apply(q as i32 - zp_in, r) + zp_out).clamp(-128, 127) as i8
}

/// i32 accumulator for one output pixel and channel. Out-of-bounds taps
/// contribute nothing: real zero maps to the input zero point, so the
/// (q - zp) term vanishes exactly like float zero padding.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate<F: Fn(usize, usize, usize) -> i8>(
    kind: ConvKind,
    conv: &QConv,
    zp_in: i32,
    in_h: usize,
    in_w: usize,
    get: &F,
    oc: usize,
    y: usize,
    x: usize,
) -> i32 {
    let s = conv.weight_shape;
    let mut acc = conv.bias_q[oc];
    match kind {
        ConvKind::K3x3 => {
            let in_c = s.c;
            for ic in 0..in_c {
                for ky in 0..3usize {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let ix = x as isize + kx as isize - 1;
                        if ix < 0 || ix >= in_w as isize {
                            continue;
                        }
                        let wq = conv.weights[((oc * in_c + ic) * 3 + ky) * 3 + kx] as i32;
                        let xq = get(ic, iy as usize, ix as usize) as i32 - zp_in;
                        acc += wq * xq;
                    }
                }
            }
        }
        ConvKind::K1x1 => {
            let in_c = s.c;
            for ic in 0..in_c {
                let wq = conv.weights[oc * in_c + ic] as i32;
                let xq = get(ic, y, x) as i32 - zp_in;
                acc += wq * xq;
            }
        }
        ConvKind::TConv => {
            // Weights are [in, out, 2, 2]; output (y, x) takes the single
            // tap (y % 2, x % 2) from input (y / 2, x / 2).
            let (in_c, out_c) = (s.n, s.c);
            let (ky, kx) = (y % 2, x % 2);
            for ic in 0..in_c {
                let wq = conv.weights[((ic * out_c + oc) * 2 + ky) * 2 + kx] as i32;
                let xq = get(ic, y / 2, x / 2) as i32 - zp_in;
                acc += wq * xq;
            }
        }
    }
    acc
}

/// Compute all output channels of one pixel, requantized to int8.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn conv_pixel_i8<F: Fn(usize, usize, usize) -> i8>(
    kind: ConvKind,
    conv: &QConv,
    zp_in: i32,
    zp_out: i32,
    in_h: usize,
    in_w: usize,
    get: &F,
    y: usize,
    x: usize,
    out: &mut [i8],
) {
    for (oc, slot) in out.iter_mut().enumerate() {
        let acc = accumulate(kind, conv, zp_in, in_h, in_w, get, oc, y, x);
        *slot = requantize_to_i8(acc, conv.requant[oc], zp_out);
    }
}

/// Compute all output channels of one pixel, dequantized to f32 logits.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn conv_pixel_f32<F: Fn(usize, usize, usize) -> i8>(
    kind: ConvKind,
    conv: &QConv,
    zp_in: i32,
    in_h: usize,
    in_w: usize,
    get: &F,
    y: usize,
    x: usize,
    out: &mut [f32],
) {
    for (oc, slot) in out.iter_mut().enumerate() {
        let acc = accumulate(kind, conv, zp_in, in_h, in_w, get, oc, y, x);
        *slot = acc as f32 * conv.dequant_scale[oc];
    }
}

