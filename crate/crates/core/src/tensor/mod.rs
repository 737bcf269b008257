//! Dense NCHW tensor container and the float reference implementations of
//! every layer type the network family uses.
//!
//! Data is stored contiguous row-major in NCHW order. Quantized tensors carry
//! their [`QuantParams`]; int4 payloads are packed two elements per byte with
//! each innermost row padded to a whole byte.

mod ops;

pub use ops::*;

use crate::error::{Error, Result};

/// Shape of a 4-D tensor in NCHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1, "all dimensions must be >= 1");
        Self { n, c, h, w }
    }

    pub fn num_elements(&self) -> usize {
        self.n
            .checked_mul(self.c)
            .and_then(|x| x.checked_mul(self.h))
            .and_then(|x| x.checked_mul(self.w))
            .expect("element count overflows the addressable range")
    }

    /// Flat index of element (n, c, h, w).
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Element type of a tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
    /// Signed 4-bit, packed two per byte, innermost rows padded to bytes.
    I4,
    I32,
}

impl DType {
    pub fn is_integer(&self) -> bool {
        !matches!(self, DType::F32)
    }

    pub fn bits(&self) -> usize {
        match self {
            DType::F32 | DType::I32 => 32,
            DType::I8 => 8,
            DType::I4 => 4,
        }
    }
}

/// Quantization granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    /// One (scale, zero_point) per output channel.
    PerChannel,
}

/// Affine quantization parameters: real = scale * (q - zero_point).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub scales: Vec<f32>,
    pub zero_points: Vec<i32>,
    pub bits: u8,
    pub granularity: Granularity,
}

impl QuantParams {
    pub fn per_tensor(scale: f32, zero_point: i32, bits: u8) -> Self {
        assert!(scale > 0.0, "scale must be positive");
        Self {
            scales: vec![scale],
            zero_points: vec![zero_point],
            bits,
            granularity: Granularity::PerTensor,
        }
    }

    pub fn per_channel(scales: Vec<f32>, zero_points: Vec<i32>, bits: u8) -> Self {
        assert!(!scales.is_empty() && scales.len() == zero_points.len());
        assert!(scales.iter().all(|&s| s > 0.0), "scales must be positive");
        Self { scales, zero_points, bits, granularity: Granularity::PerChannel }
    }

    /// Scale for output channel `c` (per-tensor params ignore `c`).
    #[inline]
    pub fn scale(&self, c: usize) -> f32 {
        match self.granularity {
            Granularity::PerTensor => self.scales[0],
            Granularity::PerChannel => self.scales[c],
        }
    }

    #[inline]
    pub fn zero_point(&self, c: usize) -> i32 {
        match self.granularity {
            Granularity::PerTensor => self.zero_points[0],
            Granularity::PerChannel => self.zero_points[c],
        }
    }

    /// Representable range for the bit width (signed).
    pub fn q_range(bits: u8) -> (i32, i32) {
        let half = 1i32 << (bits - 1);
        (-half, half - 1)
    }
}

/// Tensor payload storage.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    /// Packed int4 bytes; low nibble first within a byte.
    I4(Vec<u8>),
    I32(Vec<i32>),
}

/// Dense 4-D tensor. Immutable once constructed; all layer operations are
/// pure functions producing new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: TensorData,
    pub quant: Option<QuantParams>,
}

/// Number of bytes a packed-int4 payload occupies: rows are padded so each
/// innermost row starts on a byte boundary.
pub fn i4_packed_len(shape: &TensorShape) -> usize {
    shape.n * shape.c * shape.h * shape.w.div_ceil(2)
}

impl Tensor {
    pub fn from_f32(shape: TensorShape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), shape.num_elements(), "data length must match shape");
        Self { shape, data: TensorData::F32(data), quant: None }
    }

    pub fn zeros_f32(shape: TensorShape) -> Self {
        Self::from_f32(shape, vec![0.0; shape.num_elements()])
    }

    pub fn from_i8(shape: TensorShape, data: Vec<i8>, quant: QuantParams) -> Self {
        assert_eq!(data.len(), shape.num_elements(), "data length must match shape");
        Self { shape, data: TensorData::I8(data), quant: Some(quant) }
    }

    pub fn from_i32(shape: TensorShape, data: Vec<i32>, quant: QuantParams) -> Self {
        assert_eq!(data.len(), shape.num_elements(), "data length must match shape");
        Self { shape, data: TensorData::I32(data), quant: Some(quant) }
    }

    /// Build a packed int4 tensor from unpacked values in [-8, 7].
    pub fn from_i4_values(shape: TensorShape, values: &[i8], quant: QuantParams) -> Self {
        assert_eq!(values.len(), shape.num_elements());
        let mut bytes = vec![0u8; i4_packed_len(&shape)];
        let row_bytes = shape.w.div_ceil(2);
        for (row, chunk) in values.chunks(shape.w).enumerate() {
            for (x, &v) in chunk.iter().enumerate() {
                debug_assert!((-8..=7).contains(&v));
                let byte = &mut bytes[row * row_bytes + x / 2];
                let nib = (v as u8) & 0x0f;
                if x % 2 == 0 {
                    *byte |= nib;
                } else {
                    *byte |= nib << 4;
                }
            }
        }
        Self { shape, data: TensorData::I4(bytes), quant: Some(quant) }
    }

    pub fn dtype(&self) -> DType {
        match &self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I4(_) => DType::I4,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(Error::Shape(format!("expected f32 tensor, got {:?}", dtype_of(other)))),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Ok(v),
            other => Err(Error::Shape(format!("expected i8 tensor, got {:?}", dtype_of(other)))),
        }
    }

    /// Unpack int4 payload to one i8 per element.
    pub fn i4_values(&self) -> Result<Vec<i8>> {
        let bytes = match &self.data {
            TensorData::I4(b) => b,
            other => {
                return Err(Error::Shape(format!("expected i4 tensor, got {:?}", dtype_of(other))))
            }
        };
        let row_bytes = self.shape.w.div_ceil(2);
        let rows = self.shape.n * self.shape.c * self.shape.h;
        let mut out = Vec::with_capacity(self.shape.num_elements());
        for row in 0..rows {
            for x in 0..self.shape.w {
                let byte = bytes[row * row_bytes + x / 2];
                let nib = if x % 2 == 0 { byte & 0x0f } else { byte >> 4 };
                // Sign-extend the nibble.
                out.push(((nib << 4) as i8) >> 4);
            }
        }
        Ok(out)
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        match &self.data {
            TensorData::F32(v) => v[self.shape.index(n, c, h, w)],
            _ => panic!("at() is only defined for f32 tensors"),
        }
    }
}

fn dtype_of(data: &TensorData) -> DType {
    match data {
        TensorData::F32(_) => DType::F32,
        TensorData::I8(_) => DType::I8,
        TensorData::I4(_) => DType::I4,
        TensorData::I32(_) => DType::I32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major_nchw() {
        let s = TensorShape::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.num_elements(), 120);
    }

    #[test]
    fn i4_pack_roundtrip_odd_row() {
        // Odd innermost dimension forces per-row padding.
        let shape = TensorShape::new(1, 2, 2, 3);
        let values: Vec<i8> = vec![-8, 7, 0, 1, -1, 3, -4, 5, 2, -2, 6, -7];
        let qp = QuantParams::per_tensor(1.0, 0, 4);
        let t = Tensor::from_i4_values(shape, &values, qp);
        assert_eq!(i4_packed_len(&shape), 2 * 2 * 2);
        assert_eq!(t.i4_values().unwrap(), values);
    }

    #[test]
    fn q_range_matches_bit_width() {
        assert_eq!(QuantParams::q_range(8), (-128, 127));
        assert_eq!(QuantParams::q_range(4), (-8, 7));
    }
}
