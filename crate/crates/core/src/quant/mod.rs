//! Post-training quantization: batch-norm folding, min/max calibration,
//! int8/int4 weight quantization with int8 activations, and the construction
//! of the integer-only inference graph.
//!
//! Scheme: weights are per-output-channel symmetric (zero point 0),
//! activations per-tensor asymmetric from calibration min/max extended to
//! include zero. Rounding is half-to-even everywhere. Accumulation is i32;
//! each accumulator is rescaled by an (m, shift) fixed-point multiplier,
//! shifted by the output zero point, and clamped. Only the final logits are
//! dequantized to f32, so quantized inference is bit-exact across runs and
//! platforms.

mod engine;
mod requant;
mod serialize;

pub use engine::{integer_forward, quantize_input};
pub use requant::{apply as requant_apply, quantize_multiplier, requantize_to_i8, Requant};
pub use serialize::{container_to_quantized, quantized_to_container};

// Pixel-level kernels shared with the dataflow simulator so both execution
// paths stay bit-identical.
pub(crate) use engine::{
    concat_requant as engine_concat_requant, conv_pixel_f32 as engine_conv_pixel_f32,
    conv_pixel_i8 as engine_conv_pixel_i8, ConvKind as EngineConvKind,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{forward_with, LayerKind, ModelConfig, ModelGraph};
use crate::tensor::{Granularity, QuantParams, Tensor, TensorShape};

/// Fold every batch-norm node into its producing convolution:
/// w' = w * gamma / sqrt(var + eps), b' = beta + (b - mean) * gamma / sqrt(var + eps).
/// The returned graph has no BN nodes; convolutions carry the folded bias.
pub fn fold_bn(graph: &ModelGraph) -> Result<ModelGraph> {
    let n = graph.nodes.len();
    // Map each old node id to the id that represents it after folding.
    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::with_capacity(n);
    for (id, node) in graph.nodes.iter().enumerate() {
        if let LayerKind::BatchNorm { gamma, beta, mean, var, eps } = &node.kind {
            let src = node.inputs[0];
            let folded_id = remap[src];
            let folded = &mut nodes[folded_id];
            fold_into(folded, gamma, beta, mean, var, *eps)
                .map_err(|e| Error::Structure(format!("at node {}: {e}", node.name)))?;
            remap[id] = folded_id;
            continue;
        }
        let mut new_node = node.clone();
        new_node.inputs = node.inputs.iter().map(|&i| remap[i]).collect();
        remap[id] = nodes.len();
        nodes.push(new_node);
    }
    let skip_edges = graph.skip_edges.iter().map(|&(s, d)| (remap[s], remap[d])).collect();
    Ok(ModelGraph { config: graph.config, nodes, skip_edges })
}

fn fold_into(
    node: &mut crate::model::Node,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<()> {
    let (weights, bias) = match &mut node.kind {
        LayerKind::Conv3x3 { weights, bias } | LayerKind::Conv1x1 { weights, bias } => {
            (weights, bias)
        }
        other => {
            return Err(Error::Structure(format!(
                "batch norm must follow a convolution, found {}",
                other.kind_name()
            )))
        }
    };
    let s = weights.shape;
    let mut w = weights.as_f32()?.to_vec();
    let mut b = bias.clone().unwrap_or_else(|| vec![0.0; s.n]);
    for oc in 0..s.n {
        let inv_std = 1.0 / (var[oc] + eps).sqrt();
        let scale = gamma[oc] * inv_std;
        let base = oc * s.c * s.h * s.w;
        for v in &mut w[base..base + s.c * s.h * s.w] {
            *v *= scale;
        }
        b[oc] = beta[oc] + (b[oc] - mean[oc]) * scale;
    }
    *weights = Tensor::from_f32(s, w);
    *bias = Some(b);
    Ok(())
}

/// Per-edge running min/max over the calibration set. Edges are keyed by the
/// producing node's name; merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStats {
    pub ranges: BTreeMap<String, (f32, f32)>,
    pub sample_count: usize,
}

impl CalibrationStats {
    pub fn merge(&mut self, other: &CalibrationStats) {
        for (edge, &(lo, hi)) in &other.ranges {
            self.ranges
                .entry(edge.clone())
                .and_modify(|r| {
                    r.0 = r.0.min(lo);
                    r.1 = r.1.max(hi);
                })
                .or_insert((lo, hi));
        }
        self.sample_count += other.sample_count;
    }
}

/// Range estimation policy for activation calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    /// Plain running min/max (the default).
    MinMax,
    /// Clip each edge's range to the central `keep` quantile mass
    /// (e.g. 0.999 keeps 99.9% and trims 0.05% per tail). Costs a second
    /// pass over the calibration set.
    Percentile { keep: f64 },
}

/// Record activation min/max on every edge over the calibration images.
pub fn calibrate(graph: &ModelGraph, images: &[Tensor]) -> Result<CalibrationStats> {
    calibrate_with(graph, images, CalibrationMode::MinMax)
}

pub fn calibrate_with(
    graph: &ModelGraph,
    images: &[Tensor],
    mode: CalibrationMode,
) -> Result<CalibrationStats> {
    if images.is_empty() {
        return Err(Error::InvalidParam("calibration set must contain at least one image".into()));
    }
    let mut stats = CalibrationStats::default();
    for image in images {
        forward_with(graph, image, |id, out| {
            let name = &graph.nodes[id].name;
            if let Ok(values) = out.as_f32() {
                let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                for &v in values {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                stats
                    .ranges
                    .entry(name.clone())
                    .and_modify(|r| {
                        r.0 = r.0.min(lo);
                        r.1 = r.1.max(hi);
                    })
                    .or_insert((lo, hi));
            }
        })?;
        stats.sample_count += 1;
    }
    if let CalibrationMode::Percentile { keep } = mode {
        if !(0.0 < keep && keep <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "percentile keep fraction must be in (0, 1], got {keep}"
            )));
        }
        percentile_pass(graph, images, &mut stats, keep)?;
    }
    Ok(stats)
}

/// Second pass: histogram every edge over its min/max range and clip to the
/// central `keep` mass.
fn percentile_pass(
    graph: &ModelGraph,
    images: &[Tensor],
    stats: &mut CalibrationStats,
    keep: f64,
) -> Result<()> {
    const BINS: usize = 4096;
    let mut hists: BTreeMap<String, (Vec<u64>, u64)> = stats
        .ranges
        .keys()
        .map(|k| (k.clone(), (vec![0u64; BINS], 0u64)))
        .collect();
    for image in images {
        forward_with(graph, image, |id, out| {
            let name = &graph.nodes[id].name;
            let (lo, hi) = stats.ranges[name];
            let span = (hi - lo).max(f32::MIN_POSITIVE);
            if let (Ok(values), Some((hist, count))) = (out.as_f32(), hists.get_mut(name)) {
                for &v in values {
                    let bin = (((v - lo) / span) * BINS as f32) as usize;
                    hist[bin.min(BINS - 1)] += 1;
                    *count += 1;
                }
            }
        })?;
    }
    let tail = (1.0 - keep) / 2.0;
    for (name, (hist, count)) in hists {
        let (lo, hi) = stats.ranges[&name];
        let span = hi - lo;
        if span <= 0.0 || count == 0 {
            continue;
        }
        let cut = (count as f64 * tail).floor() as u64;
        let mut acc = 0u64;
        let mut lo_bin = 0usize;
        for (i, &h) in hist.iter().enumerate() {
            acc += h;
            if acc > cut {
                lo_bin = i;
                break;
            }
        }
        let mut acc = 0u64;
        let mut hi_bin = BINS - 1;
        for (i, &h) in hist.iter().enumerate().rev() {
            acc += h;
            if acc > cut {
                hi_bin = i;
                break;
            }
        }
        let new_lo = lo + span * (lo_bin as f32 / BINS as f32);
        let new_hi = lo + span * ((hi_bin + 1) as f32 / BINS as f32);
        stats.ranges.insert(name, (new_lo, new_hi.min(hi)));
    }
    Ok(())
}

/// Count of values that fell outside the representable range before clamping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaturationStats {
    pub saturated: u64,
    pub total: u64,
}

impl SaturationStats {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.saturated as f64 / self.total as f64
        }
    }
}

/// q = clamp(round_half_even(x / scale) + zero_point, qmin, qmax). Saturation
/// is silent; it is tallied in the returned statistic.
pub fn quantize_tensor(t: &Tensor, qp: &QuantParams) -> Result<(Tensor, SaturationStats)> {
    let x = t.as_f32()?;
    let s = t.shape;
    let (qmin, qmax) = QuantParams::q_range(qp.bits);
    if qp.granularity == Granularity::PerChannel && qp.scales.len() != s.n {
        return Err(Error::Shape(format!(
            "per-channel params have {} scales for {} output channels",
            qp.scales.len(),
            s.n
        )));
    }
    let mut sat = SaturationStats { saturated: 0, total: x.len() as u64 };
    let per_oc = s.c * s.h * s.w;
    let mut q = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        let oc = i / per_oc;
        let (scale, zp) = match qp.granularity {
            Granularity::PerTensor => (qp.scales[0], qp.zero_points[0]),
            Granularity::PerChannel => (qp.scales[oc], qp.zero_points[oc]),
        };
        let raw = (v as f64 / scale as f64).round_ties_even() as i64 + zp as i64;
        if raw < qmin as i64 || raw > qmax as i64 {
            sat.saturated += 1;
        }
        q.push(raw.clamp(qmin as i64, qmax as i64) as i8);
    }
    let tensor = match qp.bits {
        8 => Tensor::from_i8(s, q, qp.clone()),
        4 => Tensor::from_i4_values(s, &q, qp.clone()),
        bits => return Err(Error::InvalidParam(format!("unsupported weight width {bits}"))),
    };
    Ok((tensor, sat))
}

pub fn dequantize_tensor(t: &Tensor) -> Result<Tensor> {
    let qp = t
        .quant
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("tensor has no quantization parameters".into()))?;
    let values: Vec<i8> = match t.dtype() {
        crate::tensor::DType::I8 => t.as_i8()?.to_vec(),
        crate::tensor::DType::I4 => t.i4_values()?,
        other => return Err(Error::InvalidParam(format!("cannot dequantize {other:?}"))),
    };
    let s = t.shape;
    let per_oc = s.c * s.h * s.w;
    let out = values
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let oc = i / per_oc;
            let (scale, zp) = match qp.granularity {
                Granularity::PerTensor => (qp.scales[0], qp.zero_points[0]),
                Granularity::PerChannel => (qp.scales[oc], qp.zero_points[oc]),
            };
            (q as i32 - zp) as f32 * scale
        })
        .collect();
    Ok(Tensor::from_f32(s, out))
}

/// Per-tensor asymmetric int8 activation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActQuant {
    pub scale: f32,
    pub zero_point: i32,
}

impl ActQuant {
    /// Derive from a calibrated (min, max), extended to include zero.
    pub fn from_range(lo: f32, hi: f32) -> ActQuant {
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        let span = (hi - lo) as f64;
        if span <= 0.0 {
            return ActQuant { scale: 1.0, zero_point: 0 };
        }
        let scale = span / 255.0;
        let zero_point = (-128.0 - lo as f64 / scale).round_ties_even() as i32;
        ActQuant { scale: scale as f32, zero_point: zero_point.clamp(-128, 127) }
    }

    pub fn quantize_value(&self, v: f32) -> i8 {
        let q = (v as f64 / self.scale as f64).round_ties_even() as i64 + self.zero_point as i64;
        q.clamp(-128, 127) as i8
    }

    pub fn dequantize_value(&self, q: i8) -> f32 {
        (q as i32 - self.zero_point) as f32 * self.scale
    }
}

/// Integer conv/tconv parameters after quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct QConv {
    /// Unpacked quantized weights (int4 values also live in i8 storage).
    pub weights: Vec<i8>,
    pub weight_shape: TensorShape,
    pub weight_qp: QuantParams,
    /// Bias in accumulator units: `round(b / (s_in * s_w[oc]))`.
    pub bias_q: Vec<i32>,
    /// Per output channel rescale into the output edge's int8 domain.
    /// Empty for the logits layer, which dequantizes instead.
    pub requant: Vec<Requant>,
    /// Per output channel `s_in * s_w[oc]`, used to dequantize logits.
    pub dequant_scale: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QNodeKind {
    Input,
    Conv3x3(QConv),
    Conv1x1(QConv),
    TConv2x2(QConv),
    Relu,
    MaxPool2x2,
    UpsampleNearest2x,
    /// Each input is requantized into the shared output scale.
    Concat { requant: [Requant; 2] },
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNode {
    pub name: String,
    pub inputs: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kind: QNodeKind,
    /// Quantization of this node's output edge.
    pub out_qp: ActQuant,
    /// True when the node emits float logits rather than int8 activations.
    pub emits_f32: bool,
}

/// The integer inference graph: BN folded away, integer weights, per-edge
/// activation parameters, per-layer requant multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGraph {
    pub config: ModelConfig,
    pub weight_bits: u8,
    pub nodes: Vec<QNode>,
    pub skip_edges: Vec<(usize, usize)>,
    pub saturation: SaturationStats,
}

impl QuantizedGraph {
    pub fn input_qp(&self) -> ActQuant {
        self.nodes[0].out_qp
    }
}

/// Quantize a BN-folded float graph. `weight_bits` is 8 or 4; activations
/// are always int8. Pool, relu, and upsample outputs inherit their input
/// edge's parameters (the operations are monotone or exact in the quantized
/// domain), so only conv, concat, and input edges consume calibration
/// ranges.
pub fn quantize_model(
    graph: &ModelGraph,
    stats: &CalibrationStats,
    weight_bits: u8,
) -> Result<QuantizedGraph> {
    if weight_bits != 8 && weight_bits != 4 {
        return Err(Error::InvalidParam(format!(
            "weight precision must be int8 or int4, got int{weight_bits}"
        )));
    }
    if graph.nodes.iter().any(|n| matches!(n.kind, LayerKind::BatchNorm { .. })) {
        return Err(Error::Structure("quantize_model requires a BN-folded graph".into()));
    }
    let range_of = |name: &str| -> Result<(f32, f32)> {
        stats.ranges.get(name).copied().ok_or_else(|| Error::MissingStats(name.to_string()))
    };

    let mut nodes: Vec<QNode> = Vec::with_capacity(graph.nodes.len());
    let mut saturation = SaturationStats::default();
    let final_conv_id = graph
        .nodes
        .iter()
        .position(|n| matches!(n.kind, LayerKind::Output))
        .map(|out| graph.nodes[out].inputs[0])
        .ok_or_else(|| Error::Structure("graph has no output node".into()))?;

    for (id, node) in graph.nodes.iter().enumerate() {
        let input_qp = |slot: usize| -> ActQuant { nodes[node.inputs[slot]].out_qp };
        let (kind, out_qp, emits_f32) = match &node.kind {
            LayerKind::Input => {
                let (lo, hi) = range_of(&node.name)?;
                (QNodeKind::Input, ActQuant::from_range(lo, hi), false)
            }
            LayerKind::Relu => (QNodeKind::Relu, input_qp(0), false),
            LayerKind::MaxPool2x2 => (QNodeKind::MaxPool2x2, input_qp(0), false),
            LayerKind::UpsampleNearest2x => (QNodeKind::UpsampleNearest2x, input_qp(0), false),
            LayerKind::Concat => {
                let (lo, hi) = range_of(&node.name)?;
                let out = ActQuant::from_range(lo, hi);
                let requant = [
                    quantize_multiplier(input_qp(0).scale as f64 / out.scale as f64)?,
                    quantize_multiplier(input_qp(1).scale as f64 / out.scale as f64)?,
                ];
                (QNodeKind::Concat { requant }, out, false)
            }
            LayerKind::Conv3x3 { weights, bias }
            | LayerKind::Conv1x1 { weights, bias } => {
                let is_logits = id == final_conv_id;
                let out = if is_logits {
                    ActQuant { scale: 1.0, zero_point: 0 }
                } else {
                    let (lo, hi) = range_of(&node.name)?;
                    ActQuant::from_range(lo, hi)
                };
                let qconv = quantize_conv(
                    weights,
                    bias.as_deref(),
                    input_qp(0),
                    out,
                    weight_bits,
                    is_logits,
                    &mut saturation,
                )?;
                let kind = if matches!(node.kind, LayerKind::Conv3x3 { .. }) {
                    QNodeKind::Conv3x3(qconv)
                } else {
                    QNodeKind::Conv1x1(qconv)
                };
                (kind, out, is_logits)
            }
            LayerKind::TConv2x2 { weights, bias } => {
                let (lo, hi) = range_of(&node.name)?;
                let out = ActQuant::from_range(lo, hi);
                let qconv = quantize_conv(
                    weights,
                    Some(bias),
                    input_qp(0),
                    out,
                    weight_bits,
                    false,
                    &mut saturation,
                )?;
                (QNodeKind::TConv2x2(qconv), out, false)
            }
            LayerKind::BatchNorm { .. } => unreachable!("checked above"),
            LayerKind::Output => {
                (QNodeKind::Output, input_qp(0), nodes[node.inputs[0]].emits_f32)
            }
        };
        nodes.push(QNode {
            name: node.name.clone(),
            inputs: node.inputs.clone(),
            in_channels: node.in_channels,
            out_channels: node.out_channels,
            kind,
            out_qp,
            emits_f32,
        });
    }
    Ok(QuantizedGraph {
        config: graph.config,
        weight_bits,
        nodes,
        skip_edges: graph.skip_edges.clone(),
        saturation,
    })
}

/// Number of output channels of a weight tensor, accounting for the tconv
/// [in, out, 2, 2] layout.
fn weight_out_channels(shape: TensorShape, is_tconv: bool) -> usize {
    if is_tconv {
        shape.c
    } else {
        shape.n
    }
}

fn quantize_conv(
    weights: &Tensor,
    bias: Option<&[f32]>,
    in_qp: ActQuant,
    out_qp: ActQuant,
    weight_bits: u8,
    is_logits: bool,
    saturation: &mut SaturationStats,
) -> Result<QConv> {
    let s = weights.shape;
    let w = weights.as_f32()?;
    let is_tconv = s.h == 2 && s.w == 2;
    let out_c = weight_out_channels(s, is_tconv);
    let qmax = QuantParams::q_range(weight_bits).1;

    // Per-output-channel symmetric scales.
    let mut scales = vec![0.0f32; out_c];
    let oc_of = |i: usize| -> usize {
        if is_tconv {
            (i / (s.h * s.w)) % s.c
        } else {
            i / (s.c * s.h * s.w)
        }
    };
    for (i, &v) in w.iter().enumerate() {
        let oc = oc_of(i);
        scales[oc] = scales[oc].max(v.abs());
    }
    for sc in &mut scales {
        *sc = if *sc == 0.0 { 1.0 } else { *sc / qmax as f32 };
    }

    let mut q = vec![0i8; w.len()];
    for (i, &v) in w.iter().enumerate() {
        let oc = oc_of(i);
        let raw = (v as f64 / scales[oc] as f64).round_ties_even() as i64;
        saturation.total += 1;
        if raw < -(qmax as i64) - 1 || raw > qmax as i64 {
            saturation.saturated += 1;
        }
        q[i] = raw.clamp(-(qmax as i64) - 1, qmax as i64) as i8;
    }

    let bias_q: Vec<i32> = (0..out_c)
        .map(|oc| {
            let b = bias.map_or(0.0, |b| b[oc]);
            let acc_scale = in_qp.scale as f64 * scales[oc] as f64;
            (b as f64 / acc_scale).round_ties_even() as i32
        })
        .collect();

    let mut requant = Vec::new();
    let mut dequant_scale = Vec::new();
    for oc in 0..out_c {
        let acc_scale = in_qp.scale as f64 * scales[oc] as f64;
        if is_logits {
            dequant_scale.push(acc_scale as f32);
        } else {
            requant.push(quantize_multiplier(acc_scale / out_qp.scale as f64)?);
        }
    }

    Ok(QConv {
        weights: q,
        weight_shape: s,
        weight_qp: QuantParams::per_channel(scales, vec![0; out_c], weight_bits),
        bias_q,
        requant,
        dequant_scale,
    })
}
