//! Training-time augmentation: horizontal flip, small rotation, additive
//! Gaussian noise, and axis-aligned motion blur. Each step fires with its
//! own probability (0.5 by default).
//!
//! Geometry (flip, rotation) applies identically to image and mask; the mask
//! is resampled nearest-neighbor so its value set stays {0, 1}. Noise and
//! blur touch the image only, and the image is clamped back to [0, 1]. The
//! per-item RNG derives from (seed, item index), so a parallel loader
//! produces the same batch in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::pnm::Mask;
use crate::tensor::Tensor;
#[cfg(test)]
use crate::tensor::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_rotate: f64,
    pub p_noise: f64,
    pub p_blur: f64,
    /// Noise standard deviation as a fraction of the `[0,1]` dynamic range.
    pub noise_sigma: f32,
    /// Motion-blur kernel length (odd).
    pub blur_len: usize,
    /// Rotations are drawn uniformly from [-max, +max] degrees.
    pub max_rotation_deg: f32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_flip: 0.5,
            p_rotate: 0.5,
            p_noise: 0.5,
            p_blur: 0.5,
            noise_sigma: 0.02,
            blur_len: 5,
            max_rotation_deg: 10.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_flip", self.p_flip),
            ("p_rotate", self.p_rotate),
            ("p_noise", self.p_noise),
            ("p_blur", self.p_blur),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParam(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if self.blur_len == 0 || self.blur_len.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!(
                "blur_len must be odd and >= 1, got {}",
                self.blur_len
            )));
        }
        Ok(())
    }
}

/// RNG for one dataset item, independent of processing order.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Augment one (image, mask) pair. `index` selects the per-item RNG stream.
pub fn augment(
    image: &Tensor,
    mask: &Mask,
    cfg: &AugmentConfig,
    index: u64,
) -> Result<(Tensor, Mask)> {
    cfg.validate()?;
    let s = image.shape;
    if s.h != mask.h || s.w != mask.w {
        return Err(Error::Shape(format!(
            "image {}x{} vs mask {}x{}",
            s.h, s.w, mask.h, mask.w
        )));
    }
    let mut rng = item_rng(cfg.seed, index);
    let mut img = image.clone();
    let mut msk = mask.clone();

    if rng.gen_bool(cfg.p_flip) {
        img = hflip(&img)?;
        msk = hflip_mask(&msk);
    }
    if rng.gen_bool(cfg.p_rotate) {
        let deg = rng.gen_range(-(cfg.max_rotation_deg as f64)..=cfg.max_rotation_deg as f64) as f32;
        img = rotate(&img, deg)?;
        msk = rotate_mask(&msk, deg);
    }
    if rng.gen_bool(cfg.p_noise) {
        img = add_noise(&img, cfg.noise_sigma, &mut rng)?;
    }
    if rng.gen_bool(cfg.p_blur) {
        let horizontal = rng.gen_bool(0.5);
        img = motion_blur(&img, cfg.blur_len, horizontal)?;
    }
    Ok((img, msk))
}

pub fn hflip(image: &Tensor) -> Result<Tensor> {
    let x = image.as_f32()?;
    let s = image.shape;
    let mut out = vec![0.0f32; s.num_elements()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xp in 0..s.w {
                    out[s.index(n, c, y, xp)] = x[s.index(n, c, y, s.w - 1 - xp)];
                }
            }
        }
    }
    Ok(Tensor::from_f32(s, out))
}

pub fn hflip_mask(mask: &Mask) -> Mask {
    let mut data = vec![0u8; mask.data.len()];
    for y in 0..mask.h {
        for x in 0..mask.w {
            data[y * mask.w + x] = mask.data[y * mask.w + (mask.w - 1 - x)];
        }
    }
    Mask { h: mask.h, w: mask.w, data }
}

/// Rotate about the image center, bilinear sampling, zero fill outside.
pub fn rotate(image: &Tensor, degrees: f32) -> Result<Tensor> {
    let x = image.as_f32()?;
    let s = image.shape;
    let rad = (degrees as f64).to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    let (cy, cx) = ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0f32; s.num_elements()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xp in 0..s.w {
                    // Inverse rotation of the destination coordinate.
                    let dy = y as f64 - cy;
                    let dx = xp as f64 - cx;
                    let sy = cy + dy * cos - dx * sin;
                    let sx = cx + dy * sin + dx * cos;
                    let (y0, x0) = (sy.floor(), sx.floor());
                    let (wy, wx) = ((sy - y0) as f32, (sx - x0) as f32);
                    let mut acc = 0.0f32;
                    for (oy, fy) in [(0isize, 1.0 - wy), (1, wy)] {
                        for (ox, fx) in [(0isize, 1.0 - wx), (1, wx)] {
                            let iy = y0 as isize + oy;
                            let ix = x0 as isize + ox;
                            if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                acc += fy * fx * x[s.index(n, c, iy as usize, ix as usize)];
                            }
                        }
                    }
                    out[s.index(n, c, y, xp)] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_f32(s, out))
}

/// Mask rotation via nearest-neighbor sampling; zero fill outside.
pub fn rotate_mask(mask: &Mask, degrees: f32) -> Mask {
    let rad = (degrees as f64).to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    let (cy, cx) = ((mask.h as f64 - 1.0) / 2.0, (mask.w as f64 - 1.0) / 2.0);
    let mut data = vec![0u8; mask.data.len()];
    for y in 0..mask.h {
        for x in 0..mask.w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sy = (cy + dy * cos - dx * sin).round();
            let sx = (cx + dy * sin + dx * cos).round();
            if sy >= 0.0 && sx >= 0.0 && (sy as usize) < mask.h && (sx as usize) < mask.w {
                data[y * mask.w + x] = mask.data[sy as usize * mask.w + sx as usize];
            }
        }
    }
    Mask { h: mask.h, w: mask.w, data }
}

/// Additive Gaussian noise, clamped back to [0, 1].
pub fn add_noise(image: &Tensor, sigma: f32, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let x = image.as_f32()?;
    let out = x
        .iter()
        .map(|&v| (v + normal(rng) as f32 * sigma).clamp(0.0, 1.0))
        .collect();
    Ok(Tensor::from_f32(image.shape, out))
}

/// 1-D mean filter of odd length along one axis, replicated borders.
pub fn motion_blur(image: &Tensor, len: usize, horizontal: bool) -> Result<Tensor> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!("blur length must be odd, got {len}")));
    }
    let x = image.as_f32()?;
    let s = image.shape;
    let half = (len / 2) as isize;
    let mut out = vec![0.0f32; s.num_elements()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xp in 0..s.w {
                    let mut acc = 0.0f32;
                    for k in -half..=half {
                        let (sy, sx) = if horizontal {
                            (y as isize, (xp as isize + k).clamp(0, s.w as isize - 1))
                        } else {
                            ((y as isize + k).clamp(0, s.h as isize - 1), xp as isize)
                        };
                        acc += x[s.index(n, c, sy as usize, sx as usize)];
                    }
                    out[s.index(n, c, y, xp)] = acc / len as f32;
                }
            }
        }
    }
    Ok(Tensor::from_f32(s, out))
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_tensor, ChaCha8Rng, Rng, SeedableRng};

    fn unit_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        let t = rand_tensor(rng, TensorShape::new(1, 3, h, w));
        Tensor::from_f32(t.shape, t.as_f32().unwrap().iter().map(|v| (v + 1.0) / 2.0).collect())
    }

    fn rand_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
        Mask { h, w, data: (0..h * w).map(|_| rng.gen_range(0..2u8)).collect() }
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = unit_image(&mut rng, 6, 7);
        let mask = rand_mask(&mut rng, 6, 7);
        let cfg = AugmentConfig {
            p_flip: 0.0,
            p_rotate: 0.0,
            p_noise: 0.0,
            p_blur: 0.0,
            ..AugmentConfig::default()
        };
        let (img2, mask2) = augment(&img, &mask, &cfg, 3).unwrap();
        assert_eq!(img2.as_f32().unwrap(), img.as_f32().unwrap());
        assert_eq!(mask2, mask);
    }

    #[test]
    fn double_flip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = unit_image(&mut rng, 5, 8);
        let mask = rand_mask(&mut rng, 5, 8);
        let img2 = hflip(&hflip(&img).unwrap()).unwrap();
        assert_eq!(img2.as_f32().unwrap(), img.as_f32().unwrap());
        assert_eq!(hflip_mask(&hflip_mask(&mask)), mask);
    }

    #[test]
    fn zero_degree_rotation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = unit_image(&mut rng, 6, 6);
        let mask = rand_mask(&mut rng, 6, 6);
        let rot = rotate(&img, 0.0).unwrap();
        for (&a, &b) in rot.as_f32().unwrap().iter().zip(img.as_f32().unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(rotate_mask(&mask, 0.0), mask);
    }

    #[test]
    fn mask_values_survive_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = unit_image(&mut rng, 9, 9);
        let mask = rand_mask(&mut rng, 9, 9);
        let cfg = AugmentConfig { p_flip: 1.0, p_rotate: 1.0, p_noise: 1.0, p_blur: 1.0, ..AugmentConfig::default() };
        for index in 0..10 {
            let (_, m) = augment(&img, &mask, &cfg, index).unwrap();
            assert!(m.data.iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn same_seed_and_index_reproduce_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = unit_image(&mut rng, 8, 8);
        let mask = rand_mask(&mut rng, 8, 8);
        let cfg = AugmentConfig { seed: 77, ..AugmentConfig::default() };
        let (a_img, a_mask) = augment(&img, &mask, &cfg, 12).unwrap();
        let (b_img, b_mask) = augment(&img, &mask, &cfg, 12).unwrap();
        assert_eq!(
            a_img.as_f32().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b_img.as_f32().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a_mask, b_mask);
        // A different item index draws a different stream.
        let (c_img, _) = augment(&img, &mask, &cfg, 13).unwrap();
        assert_ne!(a_img.as_f32().unwrap(), c_img.as_f32().unwrap());
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Tensor::from_f32(TensorShape::new(1, 1, 4, 4), vec![0.25; 16]);
        for horizontal in [true, false] {
            let out = motion_blur(&img, 5, horizontal).unwrap();
            assert!(out.as_f32().unwrap().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        }
    }

    #[test]
    fn noise_stays_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = unit_image(&mut rng, 8, 8);
        let out = add_noise(&img, 0.5, &mut rng).unwrap();
        assert!(out.as_f32().unwrap().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_even_blur_length() {
        let cfg = AugmentConfig { blur_len: 4, ..AugmentConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
