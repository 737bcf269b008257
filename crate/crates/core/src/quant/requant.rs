//! Fixed-point requantization: rescaling an i32 accumulator into the next
//! layer's int8 domain with an integer multiplier and shift.
//!
//! A positive real multiplier M is stored as m * 2^-shift with m normalized
//! to [2^30, 2^31), giving better than 2^-30 relative representation error.
//! Rounding is round-half-to-even throughout.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requant {
    pub m: i32,
    /// Total right shift: the represented multiplier is m * 2^-shift.
    pub shift: i32,
}

impl Requant {
    /// The real value this multiplier represents.
    pub fn real(&self) -> f64 {
        self.m as f64 * 2f64.powi(-self.shift)
    }
}

/// Encode a positive real multiplier. Fails for non-finite or non-positive
/// inputs and for magnitudes outside the practical shift range.
pub fn quantize_multiplier(real: f64) -> Result<Requant> {
    if !real.is_finite() || real <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "requant multiplier must be positive and finite, got {real}"
        )));
    }
    // Normalize the mantissa into [0.5, 1).
    let mut shift = 31i32;
    let mut r = real;
    while r < 0.5 {
        r *= 2.0;
        shift += 1;
    }
    while r >= 1.0 {
        r /= 2.0;
        shift -= 1;
    }
    let mut m = (r * (1i64 << 31) as f64).round() as i64;
    if m == 1i64 << 31 {
        m >>= 1;
        shift -= 1;
    }
    if !(1..=62).contains(&shift) {
        return Err(Error::InvalidParam(format!(
            "requant multiplier {real} is outside the supported magnitude range"
        )));
    }
    Ok(Requant { m: m as i32, shift })
}

/// Right shift with round-half-to-even, exact for any i64 and 1 <= shift <= 62.
#[inline]
pub fn rounding_rshift(v: i64, shift: u32) -> i64 {
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i64 << (shift - 1);
    if rem > half || (rem == half && (floor & 1) == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Scale an accumulator by the fixed-point multiplier: round(acc * m * 2^-shift).
#[inline]
pub fn apply(acc: i32, r: Requant) -> i32 {
    let prod = acc as i64 * r.m as i64;
    rounding_rshift(prod, r.shift as u32) as i32
}

/// Full requantization step: scale, add the output zero point, clamp to int8.
#[inline]
pub fn requantize_to_i8(acc: i32, r: Requant, zero_point: i32) -> i8 {
    (apply(acc, r) + zero_point).clamp(-128, 127) as i8
}
