//! Segmentation metrics (per-class IoU, mean and weighted IoU) and platform
//! energy-efficiency arithmetic.
//!
//! Dataset-level scores micro-average: confusion matrices are summed over
//! images before the IoU division, so image order never matters. The
//! weighted IoU defaults to the inverse-class-frequency weights
//! (w_bg = 0.068, w_crack = 0.932).

use crate::error::{Error, Result};

pub const DEFAULT_W_BG: f64 = 0.068;
pub const DEFAULT_W_CRACK: f64 = 0.932;

/// Pixel-level confusion counts with crack (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Merge counts; associative and commutative, so dataset aggregation can
    /// run in any order (or in parallel).
    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

/// Count agreement between a predicted and a ground-truth mask. Masks hold
/// values in {0 background, 1 crack}.
pub fn confusion(pred: &[u8], gt: &[u8]) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "mask length mismatch: pred {} vs gt {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            _ => {
                return Err(Error::InvalidParam(format!(
                    "mask values must be 0 or 1, got pred={p} gt={g}"
                )))
            }
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    pub iou_bg: f64,
    pub iou_crack: f64,
    pub miou: f64,
    pub wiou: f64,
    pub w_bg: f64,
    pub w_crack: f64,
}

/// Per-class IoU plus the equal-weight mean and the class-frequency-weighted
/// combination. An empty union scores IoU 1 (nothing to find, nothing found).
pub fn scores(cm: &ConfusionMatrix, w_bg: f64, w_crack: f64) -> Result<SegScores> {
    if (w_bg + w_crack - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!(
            "class weights must sum to 1, got {w_bg} + {w_crack}"
        )));
    }
    let iou = |tp: u64, fp: u64, fn_: u64| -> f64 {
        let union = tp + fp + fn_;
        if union == 0 {
            1.0
        } else {
            tp as f64 / union as f64
        }
    };
    let iou_crack = iou(cm.tp, cm.fp, cm.fn_);
    // Background view: swap positive/negative roles.
    let iou_bg = iou(cm.tn, cm.fn_, cm.fp);
    Ok(SegScores {
        iou_bg,
        iou_crack,
        miou: 0.5 * iou_bg + 0.5 * iou_crack,
        wiou: w_bg * iou_bg + w_crack * iou_crack,
        w_bg,
        w_crack,
    })
}

pub fn default_scores(cm: &ConfusionMatrix) -> Result<SegScores> {
    scores(cm, DEFAULT_W_BG, DEFAULT_W_CRACK)
}

/// One throughput/power row for a platform, as measured.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformMeasurement {
    pub device: String,
    pub model_bits: String,
    pub data_bits: String,
    pub fps: f64,
    pub idle_power_w: f64,
    pub runtime_power_w: f64,
}

/// Frames per joule: dynamic counts only the power above idle,
/// runtime counts the whole draw.
pub fn energy_efficiency(m: &PlatformMeasurement) -> Result<(f64, f64)> {
    if m.fps <= 0.0 {
        return Err(Error::InvalidParam(format!("fps must be > 0, got {}", m.fps)));
    }
    if m.runtime_power_w <= m.idle_power_w {
        return Err(Error::InvalidParam(format!(
            "runtime power {} must exceed idle power {} for dynamic efficiency",
            m.runtime_power_w, m.idle_power_w
        )));
    }
    let dynamic = m.fps / (m.runtime_power_w - m.idle_power_w);
    let runtime = m.fps / m.runtime_power_w;
    Ok((dynamic, runtime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{ChaCha8Rng, Rng, SeedableRng};

    fn measurement(fps: f64, idle: f64, runtime: f64) -> PlatformMeasurement {
        PlatformMeasurement {
            device: "test".into(),
            model_bits: "int8".into(),
            data_bits: "int8".into(),
            fps,
            idle_power_w: idle,
            runtime_power_w: runtime,
        }
    }

    #[test]
    fn perfect_all_crack_prediction() {
        let pred = vec![1u8; 16];
        let gt = vec![1u8; 16];
        let cm = confusion(&pred, &gt).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 16, fp: 0, fn_: 0, tn: 0 });
        let s = default_scores(&cm).unwrap();
        assert_eq!(s.miou, 1.0);
        assert_eq!(s.wiou, 1.0);
    }

    #[test]
    fn inverted_prediction_has_zero_tp() {
        let gt = vec![0u8, 1, 0, 1];
        let pred: Vec<u8> = gt.iter().map(|&v| 1 - v).collect();
        let cm = confusion(&pred, &gt).unwrap();
        assert_eq!(cm.tp, 0);
        assert_eq!(cm.tn, 0);
    }

    #[test]
    fn confusion_matches_pixel_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred: Vec<u8> = (0..256).map(|_| rng.gen_range(0..2u8)).collect();
        let gt: Vec<u8> = (0..256).map(|_| rng.gen_range(0..2u8)).collect();
        let cm = confusion(&pred, &gt).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..256 {
            match (pred[i], gt[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        assert_eq!(cm, ConfusionMatrix { tp, fp, fn_, tn });
        assert_eq!(cm.total(), 256);
    }

    #[test]
    fn confusion_rejects_bad_values() {
        assert!(matches!(confusion(&[2], &[0]), Err(Error::InvalidParam(_))));
        assert!(matches!(confusion(&[0], &[255]), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn weighted_arithmetic_matches_hand_computation() {
        // iou_bg = 0.9, iou_crack = 0.5 built from explicit counts:
        // crack: tp=50, fp+fn=50; bg: tn=900, fp+fn=100.
        let cm = ConfusionMatrix { tp: 50, fp: 40, fn_: 10, tn: 450 };
        let s = default_scores(&cm).unwrap();
        assert!((s.iou_crack - 0.5).abs() < 1e-12);
        assert!((s.iou_bg - 0.9).abs() < 1e-12);
        assert!((s.miou - 0.7).abs() < 1e-12);
        assert!((s.wiou - 0.5272).abs() < 1e-12);
    }

    #[test]
    fn weighted_iou_penalizes_weak_crack_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let cm = ConfusionMatrix {
                tp: rng.gen_range(1..100),
                fp: rng.gen_range(1..100),
                fn_: rng.gen_range(1..100),
                tn: rng.gen_range(1000..5000),
            };
            let s = default_scores(&cm).unwrap();
            if s.iou_bg > s.iou_crack {
                assert!(s.wiou < s.miou);
            }
            assert!((0.0..=1.0).contains(&s.miou));
            assert!((0.0..=1.0).contains(&s.wiou));
        }
    }

    #[test]
    fn scores_symmetric_under_class_swap() {
        let cm = ConfusionMatrix { tp: 10, fp: 5, fn_: 3, tn: 82 };
        let swapped = ConfusionMatrix { tp: cm.tn, fp: cm.fn_, fn_: cm.fp, tn: cm.tp };
        let a = scores(&cm, 0.3, 0.7).unwrap();
        let b = scores(&swapped, 0.7, 0.3).unwrap();
        assert!((a.miou - b.miou).abs() < 1e-12);
        assert!((a.wiou - b.wiou).abs() < 1e-12);
    }

    #[test]
    fn rejects_weights_not_summing_to_one() {
        let cm = ConfusionMatrix { tp: 1, fp: 0, fn_: 0, tn: 1 };
        assert!(matches!(scores(&cm, 0.5, 0.6), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let images: Vec<(Vec<u8>, Vec<u8>)> = (0..8)
            .map(|_| {
                let pred: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2u8)).collect();
                let gt: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2u8)).collect();
                (pred, gt)
            })
            .collect();
        let forward = images
            .iter()
            .map(|(p, g)| confusion(p, g).unwrap())
            .fold(ConfusionMatrix::default(), |acc, cm| acc.merge(&cm));
        let backward = images
            .iter()
            .rev()
            .map(|(p, g)| confusion(p, g).unwrap())
            .fold(ConfusionMatrix::default(), |acc, cm| acc.merge(&cm));
        assert_eq!(forward, backward);
        assert_eq!(
            default_scores(&forward).unwrap().miou,
            default_scores(&backward).unwrap().miou
        );
    }

    #[test]
    fn reference_efficiency_rows_recompute() {
        // Raspberry Pi 5 at the smallest scale.
        let (dyn_eff, rt_eff) = energy_efficiency(&measurement(246.0, 2.73, 9.74)).unwrap();
        assert!((dyn_eff - 35.09).abs() < 0.005, "{dyn_eff}");
        assert!((rt_eff - 25.26).abs() < 0.005, "{rt_eff}");

        // Orin Nano fp32 at the smallest scale.
        let (dyn_eff, _) = energy_efficiency(&measurement(378.0, 6.97, 9.98)).unwrap();
        assert!((dyn_eff - 125.58).abs() < 0.005, "{dyn_eff}");
    }

    #[test]
    fn zero_idle_makes_both_efficiencies_equal() {
        let (dyn_eff, rt_eff) = energy_efficiency(&measurement(100.0, 0.0, 10.0)).unwrap();
        assert_eq!(dyn_eff, 10.0);
        assert_eq!(rt_eff, 10.0);
    }

    #[test]
    fn runtime_below_idle_is_an_error() {
        assert!(matches!(
            energy_efficiency(&measurement(10.0, 5.0, 5.0)),
            Err(Error::InvalidParam(_))
        ));
    }
}
