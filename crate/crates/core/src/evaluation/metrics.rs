use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::mask_ops::dilate_disk;
use crate::model::BinaryMask;

/// A frame counts toward recall when its IoU exceeds this.
pub const RECALL_THRESHOLD: f64 = 0.5;

/// Intersection over union; two empty masks agree perfectly.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims("iou", gt.dims(), pred.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        inter += usize::from(p & g);
        union += usize::from(p | g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub j_mean: f64,
    pub j_recall: f64,
    /// First-quartile mean minus last-quartile mean; needs at least 4 frames.
    pub j_decay: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn region_metrics(ious: &[f64]) -> Result<RegionMetrics> {
    if ious.is_empty() {
        return Err(Error::invalid("region metrics of an empty sequence"));
    }
    let n = ious.len();
    let q = n / 4;
    Ok(RegionMetrics {
        j_mean: mean(ious),
        j_recall: ious.iter().filter(|&&j| j > RECALL_THRESHOLD).count() as f64 / n as f64,
        j_decay: (q > 0).then(|| mean(&ious[..q]) - mean(&ious[n - q..])),
    })
}

/// `max(1, round(0.008 * diagonal))` pixels.
pub fn default_boundary_tolerance(width: usize, height: usize) -> f64 {
    (0.008 * (width as f64).hypot(height as f64)).round().max(1.0)
}

/// Foreground pixels touching the background through a 4-neighbor or lying
/// on the image border.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

fn matched_fraction(from: &BinaryMask, near: &BinaryMask) -> f64 {
    let hits = from
        .labels()
        .iter()
        .zip(near.labels())
        .filter(|&(&a, &b)| a == 1 && b == 1)
        .count();
    hits as f64 / from.count() as f64
}

/// Boundary F-measure with a Euclidean matching tolerance in pixels.
pub fn boundary_fmeasure(pred: &BinaryMask, gt: &BinaryMask, tolerance: f64) -> Result<f64> {
    check_dims("boundary_fmeasure", gt.dims(), pred.dims())?;
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(Error::invalid(format!("boundary tolerance must be >= 0: {tolerance}")));
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    match (bp.count(), bg.count()) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, &dilate_disk(&bg, tolerance));
    let recall = matched_fraction(&bg, &dilate_disk(&bp, tolerance));
    Ok(if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub per_frame_iou: Vec<f64>,
    pub j_mean: f64,
    pub j_recall: f64,
    pub j_decay: Option<f64>,
    pub f_mean: f64,
}

/// Scores aligned prediction and ground-truth sequences with the default
/// boundary tolerance.
pub fn score_sequence(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<SequenceScores> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut ious = Vec::with_capacity(preds.len());
    let mut fs = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        ious.push(iou(p, g)?);
        let (w, h) = g.dims();
        fs.push(boundary_fmeasure(p, g, default_boundary_tolerance(w, h))?);
    }
    let region = region_metrics(&ious)?;
    Ok(SequenceScores {
        j_mean: region.j_mean,
        j_recall: region.j_recall,
        j_decay: region.j_decay,
        f_mean: mean(&fs),
        per_frame_iou: ious,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    #[test]
    fn iou_examples() {
        let a = rect(8, 6, 1, 1, 4, 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &rect(8, 6, 5, 1, 7, 4)).unwrap(), 0.0);
        let left = BinaryMask::from_fn(8, 6, |x, _| x < 4);
        assert_eq!(iou(&left, &BinaryMask::ones(8, 6)).unwrap(), 0.5);
        assert_eq!(iou(&BinaryMask::zeros(8, 6), &BinaryMask::zeros(8, 6)).unwrap(), 1.0);
        assert!(iou(&a, &BinaryMask::zeros(6, 8)).is_err());
    }

    #[test]
    fn region_examples() {
        let m = region_metrics(&[1.0; 8]).unwrap();
        assert_eq!((m.j_mean, m.j_recall, m.j_decay), (1.0, 1.0, Some(0.0)));
        let m = region_metrics(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!((m.j_mean, m.j_recall, m.j_decay), (0.5, 0.5, Some(1.0)));
        assert_eq!(region_metrics(&[0.3; 9]).unwrap().j_decay, Some(0.0));
        assert_eq!(region_metrics(&[0.7, 0.2]).unwrap().j_decay, None);
        assert_eq!(region_metrics(&[0.5]).unwrap().j_recall, 0.0);
        assert!(region_metrics(&[]).is_err());
    }

    #[test]
    fn tolerance_default() {
        assert_eq!(default_boundary_tolerance(64, 64), 1.0);
        assert_eq!(default_boundary_tolerance(854, 480), 8.0);
    }

    #[test]
    fn boundary_of_a_block() {
        let b = boundary(&rect(7, 7, 1, 1, 6, 6));
        assert_eq!(b.count(), 16);
        assert!(!b.get(3, 3));
        assert_eq!(boundary(&BinaryMask::ones(3, 3)).count(), 8);
    }

    #[test]
    fn fmeasure_examples() {
        let gt = rect(20, 20, 5, 5, 12, 12);
        assert_eq!(boundary_fmeasure(&gt, &gt, 1.0).unwrap(), 1.0);
        let shifted = rect(20, 20, 6, 5, 13, 12);
        assert_eq!(boundary_fmeasure(&shifted, &gt, 1.0).unwrap(), 1.0);
        assert!(boundary_fmeasure(&shifted, &gt, 0.0).unwrap() < 1.0);
        assert_eq!(boundary_fmeasure(&BinaryMask::zeros(20, 20), &gt, 1.0).unwrap(), 0.0);
        let empty = BinaryMask::zeros(20, 20);
        assert_eq!(boundary_fmeasure(&empty, &empty, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn sequence_scores() {
        let gt = rect(16, 16, 4, 4, 10, 10);
        let preds = vec![gt.clone(), gt.clone(), BinaryMask::zeros(16, 16), BinaryMask::zeros(16, 16)];
        let s = score_sequence(&preds, &vec![gt; 4]).unwrap();
        assert_eq!(s.per_frame_iou, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.j_decay, Some(1.0));
        assert_eq!(s.f_mean, 0.5);
        assert!(score_sequence(&preds[..3], &preds).is_err());
    }

    fn random_mask(rng: &mut ChaCha8Rng) -> BinaryMask {
        BinaryMask::from_fn(9, 7, |_, _| rng.gen_bool(0.4))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_one_iff_equal(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_mask(&mut rng), random_mask(&mut rng));
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            prop_assert_eq!(iou(&a, &b).unwrap() == 1.0, a == b);
        }

        #[test]
        fn self_fmeasure_is_one(seed in any::<u64>(), tol in 0.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng);
            prop_assume!(m.count() > 0);
            prop_assert_eq!(boundary_fmeasure(&m, &m, tol).unwrap(), 1.0);
        }

        #[test]
        fn reversal_negates_decay(ious in proptest::collection::vec(0.0f64..=1.0, 4..40)) {
            let fwd = region_metrics(&ious).unwrap().j_decay.unwrap();
            let rev: Vec<f64> = ious.iter().rev().copied().collect();
            let back = region_metrics(&rev).unwrap().j_decay.unwrap();
            prop_assert!((fwd + back).abs() < 1e-12);
        }
    }
}
