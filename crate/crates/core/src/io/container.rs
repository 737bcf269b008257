//! The CFW1 weight container: a little-endian binary format holding a model
//! header plus named tensor records, closed by a CRC32 over everything that
//! precedes it. Round trips are bit-exact for f32, int8, packed int4, and
//! int32 payloads.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          4 bytes  "CFW1"
//! version        u16
//! c              u32      channel scale
//! upsample_mode  u8       0 = tconv, 1 = nearest
//! in_channels    u32
//! num_classes    u32
//! input_h        u32
//! input_w        u32
//! quantized      u8       0 = float parameters, 1 = quantized
//! tensor_count   u32
//! record[tensor_count]:
//!   name_len     u16      followed by UTF-8 name bytes
//!   dtype        u8       0 = f32, 1 = i8, 2 = i4 (packed), 3 = i32
//!   shape        4 x u32  n, c, h, w
//!   has_quant    u8       1 iff quantization parameters follow
//!     bits         u8
//!     granularity  u8     0 = per-tensor, 1 = per-channel
//!     param_count  u32    scales f32 x count, zero_points i32 x count
//!   payload_len  u32      raw payload bytes
//! crc32          u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_model, LayerKind, ModelConfig, ModelGraph, UpsampleMode};
use crate::tensor::{
    i4_packed_len, DType, Granularity, QuantParams, Tensor, TensorData, TensorShape,
};

pub const MAGIC: &[u8; 4] = b"CFW1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    pub config: ModelConfig,
    pub quantized: bool,
    pub records: Vec<TensorRecord>,
}

impl WeightContainer {
    pub fn find(&self, name: &str) -> Result<&Tensor> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.tensor)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }
}

/// CRC-32 (IEEE 802.3 polynomial, reflected).
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &byte in data {
        crc ^= u32::from(byte);
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

pub fn encode_container(container: &WeightContainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(container.config.c as u32).to_le_bytes());
    out.push(match container.config.upsample_mode {
        UpsampleMode::Tconv => 0,
        UpsampleMode::Nearest => 1,
    });
    out.extend_from_slice(&(container.config.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&(container.config.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(container.config.input_hw.0 as u32).to_le_bytes());
    out.extend_from_slice(&(container.config.input_hw.1 as u32).to_le_bytes());
    out.push(container.quantized as u8);
    out.extend_from_slice(&(container.records.len() as u32).to_le_bytes());
    for record in &container.records {
        let name = record.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let t = &record.tensor;
        out.push(match t.dtype() {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I4 => 2,
            DType::I32 => 3,
        });
        for dim in [t.shape.n, t.shape.c, t.shape.h, t.shape.w] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        match &t.quant {
            None => out.push(0),
            Some(qp) => {
                out.push(1);
                out.push(qp.bits);
                out.push(match qp.granularity {
                    Granularity::PerTensor => 0,
                    Granularity::PerChannel => 1,
                });
                out.extend_from_slice(&(qp.scales.len() as u32).to_le_bytes());
                for s in &qp.scales {
                    out.extend_from_slice(&s.to_le_bytes());
                }
                for z in &qp.zero_points {
                    out.extend_from_slice(&z.to_le_bytes());
                }
            }
        }
        let payload = encode_payload(&t.data);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn encode_payload(data: &TensorData) -> Vec<u8> {
    match data {
        TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
        TensorData::I4(v) => v.clone(),
        TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<WeightContainer> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let actual = crc32(&bytes[..body_len]);
    if stored != actual {
        return Err(Error::CrcMismatch { expected: stored, actual });
    }

    let mut r = Reader { bytes: &bytes[..body_len], pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported container version {version}")));
    }
    let c = r.u32()? as usize;
    let upsample_mode = match r.u8()? {
        0 => UpsampleMode::Tconv,
        1 => UpsampleMode::Nearest,
        other => return Err(Error::Parse(format!("unknown upsample mode {other}"))),
    };
    let in_channels = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let input_hw = (r.u32()? as usize, r.u32()? as usize);
    let quantized = r.u8()? != 0;
    let count = r.u32()? as usize;
    let config = ModelConfig { c, upsample_mode, in_channels, num_classes, input_hw };

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
        let dtype = match r.u8()? {
            0 => DType::F32,
            1 => DType::I8,
            2 => DType::I4,
            3 => DType::I32,
            other => return Err(Error::Parse(format!("unknown dtype tag {other}"))),
        };
        let shape = TensorShape::new(
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
        );
        let quant = if r.u8()? != 0 {
            let bits = r.u8()?;
            let granularity = match r.u8()? {
                0 => Granularity::PerTensor,
                1 => Granularity::PerChannel,
                other => return Err(Error::Parse(format!("unknown granularity tag {other}"))),
            };
            let n = r.u32()? as usize;
            let mut scales = Vec::with_capacity(n);
            for _ in 0..n {
                scales.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            let mut zero_points = Vec::with_capacity(n);
            for _ in 0..n {
                zero_points.push(i32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            Some(QuantParams { scales, zero_points, bits, granularity })
        } else {
            None
        };
        if dtype.is_integer() != quant.is_some() {
            return Err(Error::Parse(format!(
                "tensor {name}: quant params must be present exactly for integer dtypes"
            )));
        }
        let payload_len = r.u32()? as usize;
        let payload = r.take(payload_len)?;
        let data = decode_payload(dtype, &shape, payload, &name)?;
        records.push(TensorRecord { name, tensor: Tensor { shape, data, quant } });
    }
    if r.pos != body_len {
        return Err(Error::Parse(format!("{} trailing bytes after records", body_len - r.pos)));
    }
    Ok(WeightContainer { config, quantized, records })
}

fn decode_payload(dtype: DType, shape: &TensorShape, payload: &[u8], name: &str) -> Result<TensorData> {
    let expect = |want: usize| -> Result<()> {
        if payload.len() != want {
            Err(Error::Parse(format!(
                "tensor {name}: payload has {} bytes, expected {want}",
                payload.len()
            )))
        } else {
            Ok(())
        }
    };
    let n = shape.num_elements();
    Ok(match dtype {
        DType::F32 => {
            expect(4 * n)?;
            TensorData::F32(payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        }
        DType::I8 => {
            expect(n)?;
            TensorData::I8(payload.iter().map(|&b| b as i8).collect())
        }
        DType::I4 => {
            expect(i4_packed_len(shape))?;
            TensorData::I4(payload.to_vec())
        }
        DType::I32 => {
            expect(4 * n)?;
            TensorData::I32(payload.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect())
        }
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse("container truncated".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn write_container(path: &Path, container: &WeightContainer) -> Result<()> {
    std::fs::write(path, encode_container(container))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<WeightContainer> {
    decode_container(&std::fs::read(path)?)
}

fn vec_tensor(values: &[f32]) -> Tensor {
    Tensor::from_f32(TensorShape::new(1, values.len(), 1, 1), values.to_vec())
}

fn scalar_tensor(value: f32) -> Tensor {
    Tensor::from_f32(TensorShape::new(1, 1, 1, 1), vec![value])
}

/// Collect a float graph's parameters into container records, one per
/// parameter slot, named `<node>.<slot>`.
pub fn model_to_container(graph: &ModelGraph) -> WeightContainer {
    let mut records = Vec::new();
    let mut push = |name: String, tensor: Tensor| records.push(TensorRecord { name, tensor });
    for node in &graph.nodes {
        match &node.kind {
            LayerKind::Conv3x3 { weights, bias } | LayerKind::Conv1x1 { weights, bias } => {
                push(format!("{}.weight", node.name), weights.clone());
                if let Some(b) = bias {
                    push(format!("{}.bias", node.name), vec_tensor(b));
                }
            }
            LayerKind::TConv2x2 { weights, bias } => {
                push(format!("{}.weight", node.name), weights.clone());
                push(format!("{}.bias", node.name), vec_tensor(bias));
            }
            LayerKind::BatchNorm { gamma, beta, mean, var, eps } => {
                push(format!("{}.gamma", node.name), vec_tensor(gamma));
                push(format!("{}.beta", node.name), vec_tensor(beta));
                push(format!("{}.mean", node.name), vec_tensor(mean));
                push(format!("{}.var", node.name), vec_tensor(var));
                push(format!("{}.eps", node.name), scalar_tensor(*eps));
            }
            _ => {}
        }
    }
    WeightContainer { config: graph.config, quantized: false, records }
}

/// Rebuild a float graph from a container: constructs the topology from the
/// header config and binds every parameter slot, verifying shapes.
pub fn container_to_model(container: &WeightContainer) -> Result<ModelGraph> {
    if container.quantized {
        return Err(Error::Parse("container holds a quantized model, not float weights".into()));
    }
    let mut graph = build_model(container.config)?;
    for node in &mut graph.nodes {
        let name = node.name.clone();
        match &mut node.kind {
            LayerKind::Conv3x3 { weights, bias } | LayerKind::Conv1x1 { weights, bias } => {
                *weights = take_tensor(container, &format!("{name}.weight"), weights.shape)?;
                if bias.is_some() {
                    *bias = Some(take_vec(container, &format!("{name}.bias"), node.out_channels)?);
                }
            }
            LayerKind::TConv2x2 { weights, bias } => {
                *weights = take_tensor(container, &format!("{name}.weight"), weights.shape)?;
                *bias = take_vec(container, &format!("{name}.bias"), node.out_channels)?;
            }
            LayerKind::BatchNorm { gamma, beta, mean, var, eps } => {
                let c = gamma.len();
                *gamma = take_vec(container, &format!("{name}.gamma"), c)?;
                *beta = take_vec(container, &format!("{name}.beta"), c)?;
                *mean = take_vec(container, &format!("{name}.mean"), c)?;
                *var = take_vec(container, &format!("{name}.var"), c)?;
                let e = take_vec(container, &format!("{name}.eps"), 1)?;
                *eps = e[0];
            }
            _ => {}
        }
    }
    Ok(graph)
}

fn take_tensor(container: &WeightContainer, name: &str, want: TensorShape) -> Result<Tensor> {
    let t = container.find(name)?;
    if t.shape != want {
        return Err(Error::TensorShapeMismatch(format!(
            "{name}: stored {} vs graph slot {want}",
            t.shape
        )));
    }
    Ok(t.clone())
}

fn take_vec(container: &WeightContainer, name: &str, want_len: usize) -> Result<Vec<f32>> {
    let t = container.find(name)?;
    let v = t.as_f32()?;
    if v.len() != want_len {
        return Err(Error::TensorShapeMismatch(format!(
            "{name}: stored {} values vs graph slot {want_len}",
            v.len()
        )));
    }
    Ok(v.to_vec())
}

pub fn save_model(path: &Path, graph: &ModelGraph) -> Result<()> {
    write_container(path, &model_to_container(graph))
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    container_to_model(&read_container(path)?)
}
