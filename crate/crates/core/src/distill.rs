//! Knowledge-distillation loss kernel: the temperature-softened KL term, the
//! hard term (weighted cross-entropy plus soft Dice on the crack class), the
//! alpha mix, and the analytic gradient with respect to the student logits.
//!
//! Teacher logits whose resolution differs from the student's are resized
//! bilinearly before the loss. All reductions are means over pixels; the
//! Dice term uses smoothing epsilon 1. Internal arithmetic is f64 so the
//! finite-difference gradient check is meaningful.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::container::{read_container, write_container, TensorRecord, WeightContainer};
use crate::model::{ModelConfig, UpsampleMode};
use crate::tensor::{bilinear_resize, Tensor, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KDConfig {
    /// Softening temperature; must be > 0, and > 1 to actually soften.
    pub temperature: f64,
    /// Trade-off between teacher supervision (1) and ground truth (0).
    pub alpha: f64,
    /// Weight of the Dice term inside the hard loss.
    pub lambda_dice: f64,
    /// Cross-entropy class weights, (background, crack).
    pub class_weights: [f64; 2],
}

impl Default for KDConfig {
    fn default() -> Self {
        Self { temperature: 2.0, alpha: 0.5, lambda_dice: 1.0, class_weights: [1.0, 1.0] }
    }
}

impl KDConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParam(format!(
                "alpha must be within [0, 1], got {}",
                self.alpha
            )));
        }
        if self.lambda_dice < 0.0 {
            return Err(Error::InvalidParam(format!(
                "lambda_dice must be >= 0, got {}",
                self.lambda_dice
            )));
        }
        Ok(())
    }

    /// Softening requires T > 1; smaller values sharpen instead.
    pub fn temperature_is_softening(&self) -> bool {
        self.temperature > 1.0
    }
}

/// One training batch: student logits, teacher logits (any resolution), and
/// the {0,1} ground-truth mask at student resolution.
#[derive(Debug, Clone)]
pub struct DistillBatch {
    pub student_logits: Tensor,
    pub teacher_logits: Tensor,
    pub mask: Vec<u8>,
}

const DICE_EPS: f64 = 1.0;

struct Prepared {
    student: Tensor,
    teacher: Tensor,
    shape: TensorShape,
}

fn prepare(batch: &DistillBatch) -> Result<Prepared> {
    let s = batch.student_logits.shape;
    if s.c != 2 {
        return Err(Error::Shape(format!("student logits must have 2 channels, got {}", s.c)));
    }
    let t = batch.teacher_logits.shape;
    if t.c != 2 || t.n != s.n {
        return Err(Error::Shape(format!(
            "teacher logits {t} incompatible with student {s}"
        )));
    }
    if batch.mask.len() != s.n * s.h * s.w {
        return Err(Error::Shape(format!(
            "mask has {} values, expected {}",
            batch.mask.len(),
            s.n * s.h * s.w
        )));
    }
    if let Some(&bad) = batch.mask.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidParam(format!("mask values must be 0 or 1, got {bad}")));
    }
    let teacher = if (t.h, t.w) == (s.h, s.w) {
        batch.teacher_logits.clone()
    } else {
        bilinear_resize(&batch.teacher_logits, s.h, s.w)?
    };
    Ok(Prepared { student: batch.student_logits.clone(), teacher, shape: s })
}

/// Two-class softmax of (z0, z1) / T in f64.
#[inline]
fn softmax2(z0: f64, z1: f64, t: f64) -> (f64, f64) {
    let (a, b) = (z0 / t, z1 / t);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let sum = ea + eb;
    (ea / sum, eb / sum)
}

/// Mean over pixels of T^2 * KL(p_teacher || p_student) on the softened
/// distributions. Zero exactly when the logits match.
pub fn kd_loss(batch: &DistillBatch, cfg: &KDConfig) -> Result<f64> {
    cfg.validate()?;
    let p = prepare(batch)?;
    let (zs, zt) = (p.student.as_f32()?, p.teacher.as_f32()?);
    let s = p.shape;
    let t = cfg.temperature;
    let mut sum = 0.0f64;
    let pixels = (s.n * s.h * s.w) as f64;
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let (i0, i1) = (s.index(n, 0, y, x), s.index(n, 1, y, x));
                let (pt0, pt1) = softmax2(zt[i0] as f64, zt[i1] as f64, t);
                let (ps0, ps1) = softmax2(zs[i0] as f64, zs[i1] as f64, t);
                sum += t * t * (pt0 * (pt0.ln() - ps0.ln()) + pt1 * (pt1.ln() - ps1.ln()));
            }
        }
    }
    Ok(sum / pixels)
}

/// Weighted cross-entropy plus lambda_dice times the soft Dice loss on the
/// crack class (softmax at T = 1, smoothing 1, mean over pixels for CE,
/// batch-global Dice sums).
pub fn hard_loss(batch: &DistillBatch, cfg: &KDConfig) -> Result<f64> {
    cfg.validate()?;
    let p = prepare(batch)?;
    let (ce, dice) = ce_and_dice(&p, batch, cfg)?;
    Ok(ce + cfg.lambda_dice * dice)
}

fn ce_and_dice(p: &Prepared, batch: &DistillBatch, cfg: &KDConfig) -> Result<(f64, f64)> {
    let zs = p.student.as_f32()?;
    let s = p.shape;
    let pixels = (s.n * s.h * s.w) as f64;
    let mut ce = 0.0f64;
    let mut inter = 0.0f64; // sum p_crack * y
    let mut p_sum = 0.0f64; // sum p_crack
    let mut y_sum = 0.0f64; // sum y
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let (i0, i1) = (s.index(n, 0, y, x), s.index(n, 1, y, x));
                let (p0, p1) = softmax2(zs[i0] as f64, zs[i1] as f64, 1.0);
                let label = batch.mask[(n * s.h + y) * s.w + x] as usize;
                let p_label = if label == 1 { p1 } else { p0 };
                ce -= cfg.class_weights[label] * p_label.ln();
                inter += p1 * label as f64;
                p_sum += p1;
                y_sum += label as f64;
            }
        }
    }
    let dice = 1.0 - (2.0 * inter + DICE_EPS) / (p_sum + y_sum + DICE_EPS);
    Ok((ce / pixels, dice))
}

/// alpha * kd + (1 - alpha) * hard.
pub fn total_loss(batch: &DistillBatch, cfg: &KDConfig) -> Result<f64> {
    Ok(cfg.alpha * kd_loss(batch, cfg)? + (1.0 - cfg.alpha) * hard_loss(batch, cfg)?)
}

/// Store precomputed teacher logits as a weight container whose records are
/// f32 tensors keyed by image id.
pub fn write_teacher_logits(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let records = entries
        .iter()
        .map(|(id, tensor)| {
            if tensor.as_f32().is_err() {
                return Err(Error::InvalidParam(format!("teacher logits '{id}' must be f32")));
            }
            Ok(TensorRecord { name: id.clone(), tensor: tensor.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let container = WeightContainer {
        config: ModelConfig::new(32, UpsampleMode::Tconv).expect("reference config"),
        quantized: false,
        records,
    };
    write_container(path, &container)
}

/// Load teacher logits keyed by image id.
pub fn read_teacher_logits(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let container = read_container(path)?;
    container
        .records
        .into_iter()
        .map(|r| {
            r.tensor.as_f32().map_err(|_| {
                Error::Parse(format!("teacher logits '{}' is not an f32 tensor", r.name))
            })?;
            Ok((r.name, r.tensor))
        })
        .collect()
}

/// Analytic gradient of the total loss with respect to the student logits.
pub fn loss_grad(batch: &DistillBatch, cfg: &KDConfig) -> Result<Tensor> {
    cfg.validate()?;
    let p = prepare(batch)?;
    let (zs, zt) = (p.student.as_f32()?, p.teacher.as_f32()?);
    let s = p.shape;
    let pixels = (s.n * s.h * s.w) as f64;
    let t = cfg.temperature;

    // Dice needs the batch-global sums before the per-pixel pass.
    let mut inter = 0.0f64;
    let mut p_sum = 0.0f64;
    let mut y_sum = 0.0f64;
    let mut probs = vec![0.0f64; s.num_elements()];
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let (i0, i1) = (s.index(n, 0, y, x), s.index(n, 1, y, x));
                let (p0, p1) = softmax2(zs[i0] as f64, zs[i1] as f64, 1.0);
                probs[i0] = p0;
                probs[i1] = p1;
                let label = batch.mask[(n * s.h + y) * s.w + x] as f64;
                inter += p1 * label;
                p_sum += p1;
                y_sum += label;
            }
        }
    }
    let b_eps = p_sum + y_sum + DICE_EPS;
    let d_num = 2.0 * inter + DICE_EPS;

    let mut grad = vec![0.0f32; s.num_elements()];
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let (i0, i1) = (s.index(n, 0, y, x), s.index(n, 1, y, x));
                let label = batch.mask[(n * s.h + y) * s.w + x] as usize;

                // KD term: T * (p_s - p_t) on the softened distributions.
                let (pt0, pt1) = softmax2(zt[i0] as f64, zt[i1] as f64, t);
                let (ps0, ps1) = softmax2(zs[i0] as f64, zs[i1] as f64, t);
                let kd0 = t * (ps0 - pt0) / pixels;
                let kd1 = t * (ps1 - pt1) / pixels;

                // Weighted CE: w_y * (p - onehot).
                let w = cfg.class_weights[label];
                let (p0, p1) = (probs[i0], probs[i1]);
                let ce0 = w * (p0 - if label == 0 { 1.0 } else { 0.0 }) / pixels;
                let ce1 = w * (p1 - if label == 1 { 1.0 } else { 0.0 }) / pixels;

                // Dice: dD/dp1 through the two-class softmax Jacobian.
                let dd_dp1 = -2.0 * label as f64 / b_eps + d_num / (b_eps * b_eps);
                let jac = p1 * (1.0 - p1); // dp1/dz1 = -dp1/dz0
                let dice1 = dd_dp1 * jac;
                let dice0 = -dice1;

                let a = cfg.alpha;
                grad[i0] = (a * kd0 + (1.0 - a) * (ce0 + cfg.lambda_dice * dice0)) as f32;
                grad[i1] = (a * kd1 + (1.0 - a) * (ce1 + cfg.lambda_dice * dice1)) as f32;
            }
        }
    }
    Ok(Tensor::from_f32(s, grad))
}
