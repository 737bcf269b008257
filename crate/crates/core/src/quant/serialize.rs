//! Quantized-graph (de)serialization through the CFW1 container.
//!
//! Integer weights keep their per-channel parameters inside the tensor
//! record. Graph-level data rides in auxiliary records: per-node activation
//! scales/zero-points in node order, per-conv bias/requant arrays, and a
//! small meta record. Node order is deterministic for a given config, so
//! loading rebuilds the topology from the header and binds records by name.

use super::{ActQuant, QConv, QNode, QNodeKind, QuantizedGraph, Requant, SaturationStats};
use crate::error::{Error, Result};
use crate::io::container::{TensorRecord, WeightContainer};
use crate::model::build_model;
use crate::tensor::{DType, QuantParams, Tensor, TensorShape};

/// Marker bit width for tensors holding raw i32 accumulator-domain values
/// (biases, requant words) rather than quantized activations or weights.
const ACC_BITS: u8 = 32;

fn i32_record(name: &str, values: &[i32]) -> TensorRecord {
    let shape = TensorShape::new(1, values.len().max(1), 1, 1);
    let data = if values.is_empty() { vec![0] } else { values.to_vec() };
    TensorRecord {
        name: name.to_string(),
        tensor: Tensor::from_i32(shape, data, QuantParams::per_tensor(1.0, 0, ACC_BITS)),
    }
}

fn f32_record(name: &str, values: &[f32]) -> TensorRecord {
    let shape = TensorShape::new(1, values.len().max(1), 1, 1);
    let data = if values.is_empty() { vec![0.0] } else { values.to_vec() };
    TensorRecord { name: name.to_string(), tensor: Tensor::from_f32(shape, data) }
}

pub fn quantized_to_container(qg: &QuantizedGraph) -> WeightContainer {
    let mut records = Vec::new();
    records.push(i32_record(
        "quant.meta",
        &[qg.weight_bits as i32, qg.saturation.saturated as i32, qg.saturation.total as i32],
    ));
    let scales: Vec<f32> = qg.nodes.iter().map(|n| n.out_qp.scale).collect();
    let zps: Vec<i32> = qg.nodes.iter().map(|n| n.out_qp.zero_point).collect();
    records.push(f32_record("act.scales", &scales));
    records.push(i32_record("act.zero_points", &zps));

    for node in &qg.nodes {
        match &node.kind {
            QNodeKind::Conv3x3(c) | QNodeKind::Conv1x1(c) | QNodeKind::TConv2x2(c) => {
                let tensor = match qg.weight_bits {
                    4 => Tensor::from_i4_values(c.weight_shape, &c.weights, c.weight_qp.clone()),
                    _ => Tensor::from_i8(c.weight_shape, c.weights.clone(), c.weight_qp.clone()),
                };
                records.push(TensorRecord { name: format!("{}.weight", node.name), tensor });
                records.push(i32_record(&format!("{}.bias_q", node.name), &c.bias_q));
                let ms: Vec<i32> = c.requant.iter().map(|r| r.m).collect();
                let shifts: Vec<i32> = c.requant.iter().map(|r| r.shift).collect();
                records.push(i32_record(&format!("{}.requant_m", node.name), &ms));
                records.push(i32_record(&format!("{}.requant_shift", node.name), &shifts));
                records.push(f32_record(&format!("{}.dequant_scale", node.name), &c.dequant_scale));
            }
            QNodeKind::Concat { requant } => {
                records.push(i32_record(
                    &format!("{}.requant_m", node.name),
                    &[requant[0].m, requant[1].m],
                ));
                records.push(i32_record(
                    &format!("{}.requant_shift", node.name),
                    &[requant[0].shift, requant[1].shift],
                ));
            }
            _ => {}
        }
    }
    WeightContainer { config: qg.config, quantized: true, records }
}

pub fn container_to_quantized(container: &WeightContainer) -> Result<QuantizedGraph> {
    if !container.quantized {
        return Err(Error::Parse("container holds float weights, not a quantized model".into()));
    }
    let meta = i32_values(container, "quant.meta")?;
    if meta.len() != 3 {
        return Err(Error::Parse("quant.meta must hold 3 values".into()));
    }
    let weight_bits = meta[0] as u8;
    let saturation =
        SaturationStats { saturated: meta[1] as u64, total: meta[2] as u64 };
    let scales = f32_values(container, "act.scales")?;
    let zps = i32_values(container, "act.zero_points")?;

    // Rebuild the folded topology, then bind records onto it.
    let float_graph = super::fold_bn(&build_model(container.config)?)?;
    if scales.len() != float_graph.nodes.len() || zps.len() != float_graph.nodes.len() {
        return Err(Error::Parse(format!(
            "activation tables have {} entries for {} nodes",
            scales.len(),
            float_graph.nodes.len()
        )));
    }
    let final_conv_id = float_graph
        .nodes
        .iter()
        .position(|n| matches!(n.kind, crate::model::LayerKind::Output))
        .map(|out| float_graph.nodes[out].inputs[0])
        .unwrap();

    let mut nodes = Vec::with_capacity(float_graph.nodes.len());
    for (id, node) in float_graph.nodes.iter().enumerate() {
        use crate::model::LayerKind;
        let out_qp = ActQuant { scale: scales[id], zero_point: zps[id] };
        let (kind, emits_f32) = match &node.kind {
            LayerKind::Input => (QNodeKind::Input, false),
            LayerKind::Relu => (QNodeKind::Relu, false),
            LayerKind::MaxPool2x2 => (QNodeKind::MaxPool2x2, false),
            LayerKind::UpsampleNearest2x => (QNodeKind::UpsampleNearest2x, false),
            LayerKind::Concat => {
                let r = load_requants(container, &node.name, 2)?;
                (QNodeKind::Concat { requant: [r[0], r[1]] }, false)
            }
            LayerKind::Conv3x3 { .. } | LayerKind::Conv1x1 { .. } | LayerKind::TConv2x2 { .. } => {
                let is_logits = id == final_conv_id;
                let qconv = load_qconv(container, &node.name, weight_bits, is_logits, node.out_channels)?;
                let kind = match &node.kind {
                    LayerKind::Conv3x3 { .. } => QNodeKind::Conv3x3(qconv),
                    LayerKind::Conv1x1 { .. } => QNodeKind::Conv1x1(qconv),
                    _ => QNodeKind::TConv2x2(qconv),
                };
                (kind, is_logits)
            }
            LayerKind::BatchNorm { .. } => unreachable!("folded"),
            LayerKind::Output => {
                let feeds: &QNode = &nodes[node.inputs[0]];
                (QNodeKind::Output, feeds.emits_f32)
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
        config: container.config,
        weight_bits,
        nodes,
        skip_edges: float_graph.skip_edges.clone(),
        saturation,
    })
}

fn i32_values(container: &WeightContainer, name: &str) -> Result<Vec<i32>> {
    match &container.find(name)?.data {
        crate::tensor::TensorData::I32(v) => Ok(v.clone()),
        _ => Err(Error::Parse(format!("{name} must be an i32 record"))),
    }
}

fn f32_values(container: &WeightContainer, name: &str) -> Result<Vec<f32>> {
    Ok(container.find(name)?.as_f32()?.to_vec())
}

fn load_requants(container: &WeightContainer, node: &str, want: usize) -> Result<Vec<Requant>> {
    let ms = i32_values(container, &format!("{node}.requant_m"))?;
    let shifts = i32_values(container, &format!("{node}.requant_shift"))?;
    if ms.len() < want || shifts.len() < want {
        return Err(Error::Parse(format!("{node}: requant arrays too short")));
    }
    Ok(ms.iter().zip(&shifts).map(|(&m, &shift)| Requant { m, shift }).collect())
}

fn load_qconv(
    container: &WeightContainer,
    node: &str,
    weight_bits: u8,
    is_logits: bool,
    out_channels: usize,
) -> Result<QConv> {
    let wt = container.find(&format!("{node}.weight"))?;
    let weights = match wt.dtype() {
        DType::I8 => wt.as_i8()?.to_vec(),
        DType::I4 => wt.i4_values()?,
        other => return Err(Error::Parse(format!("{node}.weight has dtype {other:?}"))),
    };
    let weight_qp = wt
        .quant
        .clone()
        .ok_or_else(|| Error::Parse(format!("{node}.weight lacks quant params")))?;
    if weight_qp.bits != weight_bits {
        return Err(Error::Parse(format!(
            "{node}.weight stored at {} bits, container says {weight_bits}",
            weight_qp.bits
        )));
    }
    let bias_q = i32_values(container, &format!("{node}.bias_q"))?;
    if bias_q.len() != out_channels {
        return Err(Error::TensorShapeMismatch(format!(
            "{node}.bias_q has {} entries for {out_channels} channels",
            bias_q.len()
        )));
    }
    let (requant, dequant_scale) = if is_logits {
        let d = f32_values(container, &format!("{node}.dequant_scale"))?;
        if d.len() != out_channels {
            return Err(Error::TensorShapeMismatch(format!(
                "{node}.dequant_scale has {} entries for {out_channels} channels",
                d.len()
            )));
        }
        (Vec::new(), d)
    } else {
        (load_requants(container, node, out_channels)?, Vec::new())
    };
    Ok(QConv { weights, weight_shape: wt.shape, weight_qp, bias_q, requant, dequant_scale })
}
