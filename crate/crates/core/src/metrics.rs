//! Pixel-level segmentation metrics: pooled IoU, per-image normalized IoU,
//! detection probability and false-alarm rate over connected components,
//! plus ROC threshold sweeps.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary segmentation mask; any value > 0 counts as positive.
pub type Mask = Array2<u8>;

/// Per-image pixel confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    /// ground-truth positive pixels
    pub t: u64,
    /// predicted positive pixels
    pub p: u64,
}

/// Per-image component-matching counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// ground-truth targets matched by a predicted component
    pub matched: u64,
    /// ground-truth targets present
    pub gt_targets: u64,
    /// predicted-positive pixels in components matched to no target
    pub false_pixels: u64,
    /// total pixels in the image
    pub total_pixels: u64,
}

/// Dataset totals backing `pd` and `fa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub n_pred: u64,
    pub n_all: u64,
    pub n_false: u64,
    pub p_all: u64,
}

/// Full evaluation result. The four metric values are exactly recomputable
/// from the stored per-image counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub miou: f64,
    pub niou: f64,
    pub pd: f64,
    /// raw false-alarm ratio (reported as `fa * 1e6` in serialized form)
    pub fa: f64,
    pub threshold: f64,
    pub n_images: usize,
    pub confusion: Vec<ConfusionCounts>,
    pub detection: DetectionCounts,
}

/// The stable serialized summary (`report.json`, checkpoint snapshots).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReportSummary {
    pub miou: f64,
    pub niou: f64,
    pub pd: f64,
    pub fa_e6: f64,
    pub threshold: f64,
    pub n_images: usize,
}

impl MetricReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            miou: self.miou,
            niou: self.niou,
            pd: self.pd,
            fa_e6: self.fa * 1e6,
            threshold: self.threshold,
            n_images: self.n_images,
        }
    }

    /// One line in comparison-table column order: mIoU, nIoU, Pd, Fa(x1e-6).
    pub fn format_line(&self) -> String {
        format!(
            "mIoU {:.4}  nIoU {:.4}  Pd {:.4}  Fa(x1e-6) {:.2}",
            self.miou,
            self.niou,
            self.pd,
            self.fa * 1e6
        )
    }
}

/// `mask[x] = 1` iff `prob[x] > threshold` (strict).
pub fn binarize(prob: &Array2<f64>, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(prob.mapv(|v| u8::from(v > threshold)))
}

/// Pixel confusion counts for one prediction/ground-truth pair.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::Argument(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut c = ConfusionCounts { tp: 0, t: 0, p: 0 };
    for (&pv, &gv) in pred.iter().zip(gt.iter()) {
        let pv = pv > 0;
        let gv = gv > 0;
        c.tp += u64::from(pv && gv);
        c.t += u64::from(gv);
        c.p += u64::from(pv);
    }
    Ok(c)
}

/// Dataset-pooled IoU: `sum TP / sum (T + P - TP)`; 1.0 when the
/// denominator is zero (all masks empty).
pub fn iou_from_counts(counts: &[ConfusionCounts]) -> f64 {
    let tp: u64 = counts.iter().map(|c| c.tp).sum();
    let denom: u64 = counts.iter().map(|c| c.t + c.p - c.tp).sum();
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

/// Per-image-averaged IoU; an image with an empty union contributes 1.0.
pub fn niou_from_counts(counts: &[ConfusionCounts]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Argument("niou of an empty image list".into()));
    }
    let sum: f64 = counts
        .iter()
        .map(|c| {
            let denom = c.t + c.p - c.tp;
            if denom == 0 {
                1.0
            } else {
                c.tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(sum / counts.len() as f64)
}

pub fn iou(pairs: &[(Mask, Mask)]) -> Result<f64> {
    let counts = pairs
        .iter()
        .map(|(p, g)| confusion(p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(iou_from_counts(&counts))
}

pub fn niou(pairs: &[(Mask, Mask)]) -> Result<f64> {
    let counts = pairs
        .iter()
        .map(|(p, g)| confusion(p, g))
        .collect::<Result<Vec<_>>>()?;
    niou_from_counts(&counts)
}

/// One 8-connected component of positive pixels.
#[derive(Debug, Clone)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
}

/// Label 8-connected components in scan order.
pub fn connected_components(mask: &Mask) -> Vec<Component> {
    let (h, w) = mask.dim();
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut components = Vec::new();
    let mut queue = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 || seen[[y, x]] {
                continue;
            }
            queue.clear();
            queue.push((y, x));
            seen[[y, x]] = true;
            let mut pixels = Vec::new();
            while let Some((cy, cx)) = queue.pop() {
                pixels.push((cy, cx));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (cy as i64 + dy, cx as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] > 0 && !seen[[ny, nx]] {
                            seen[[ny, nx]] = true;
                            queue.push((ny, nx));
                        }
                    }
                }
            }
            let n = pixels.len() as f64;
            let cy = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cx = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            components.push(Component {
                pixels,
                centroid: (cy, cx),
            });
        }
    }
    components
}

/// Match predicted components to ground-truth targets by centroid distance.
///
/// Greedy nearest-first one-to-one assignment: candidate pairs within
/// `dist_px` are taken in ascending distance order, each component and each
/// target used at most once. Pixels of unmatched predicted components count
/// as false pixels.
pub fn match_targets(pred: &Mask, gt: &Mask, dist_px: f64) -> Result<MatchResult> {
    if pred.dim() != gt.dim() {
        return Err(Error::Argument(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if dist_px <= 0.0 {
        return Err(Error::Argument(format!(
            "dist_px must be positive, got {dist_px}"
        )));
    }
    let pred_comps = connected_components(pred);
    let gt_comps = connected_components(gt);

    let mut candidates = Vec::new();
    for (pi, pc) in pred_comps.iter().enumerate() {
        for (gi, gc) in gt_comps.iter().enumerate() {
            let dy = pc.centroid.0 - gc.centroid.0;
            let dx = pc.centroid.1 - gc.centroid.1;
            let dist = (dy * dy + dx * dx).sqrt();
            if dist <= dist_px {
                candidates.push((dist, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; pred_comps.len()];
    let mut gt_used = vec![false; gt_comps.len()];
    let mut matched = 0u64;
    for (_, pi, gi) in candidates {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        matched += 1;
    }
    let false_pixels: u64 = pred_comps
        .iter()
        .zip(&pred_used)
        .filter(|(_, used)| !**used)
        .map(|(c, _)| c.pixels.len() as u64)
        .sum();
    let (h, w) = pred.dim();
    Ok(MatchResult {
        matched,
        gt_targets: gt_comps.len() as u64,
        false_pixels,
        total_pixels: (h * w) as u64,
    })
}

/// Probability of detection: matched targets over all targets, pooled.
pub fn pd(per_image: &[MatchResult]) -> Result<f64> {
    let all: u64 = per_image.iter().map(|m| m.gt_targets).sum();
    if all == 0 {
        return Err(Error::UndefinedMetric(
            "pd is undefined: no ground-truth targets in the dataset".into(),
        ));
    }
    let matched: u64 = per_image.iter().map(|m| m.matched).sum();
    Ok(matched as f64 / all as f64)
}

/// False-alarm rate: false pixels over all pixels (raw ratio; the
/// conventional report multiplies by 1e6).
pub fn fa(per_image: &[MatchResult]) -> Result<f64> {
    let pixels: u64 = per_image.iter().map(|m| m.total_pixels).sum();
    if pixels == 0 {
        return Err(Error::Argument("fa over zero pixels".into()));
    }
    let false_px: u64 = per_image.iter().map(|m| m.false_pixels).sum();
    Ok(false_px as f64 / pixels as f64)
}

pub fn detection_totals(per_image: &[MatchResult]) -> DetectionCounts {
    DetectionCounts {
        n_pred: per_image.iter().map(|m| m.matched).sum(),
        n_all: per_image.iter().map(|m| m.gt_targets).sum(),
        n_false: per_image.iter().map(|m| m.false_pixels).sum(),
        p_all: per_image.iter().map(|m| m.total_pixels).sum(),
    }
}

/// One point of an ROC sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fa: f64,
    pub pd: f64,
}

/// Sweep strictly increasing thresholds over a set of probability maps.
pub fn roc_curve(
    probs: &[Array2<f64>],
    gts: &[Mask],
    thresholds: &[f64],
    dist_px: f64,
) -> Result<Vec<RocPoint>> {
    if probs.len() != gts.len() {
        return Err(Error::Argument(format!(
            "{} probability maps vs {} ground-truth masks",
            probs.len(),
            gts.len()
        )));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(
            "thresholds must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &th in thresholds {
        let mut matches = Vec::with_capacity(probs.len());
        for (prob, gt) in probs.iter().zip(gts) {
            let mask = binarize(prob, th)?;
            matches.push(match_targets(&mask, gt, dist_px)?);
        }
        out.push(RocPoint {
            threshold: th,
            fa: fa(&matches)?,
            pd: pd(&matches)?,
        });
    }
    Ok(out)
}

/// Full report for already-binarized predictions.
pub fn report(pairs: &[(Mask, Mask)], threshold: f64, dist_px: f64) -> Result<MetricReport> {
    let confusion_counts = pairs
        .iter()
        .map(|(p, g)| confusion(p, g))
        .collect::<Result<Vec<_>>>()?;
    let matches = pairs
        .iter()
        .map(|(p, g)| match_targets(p, g, dist_px))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        miou: iou_from_counts(&confusion_counts),
        niou: niou_from_counts(&confusion_counts)?,
        pd: pd(&matches)?,
        fa: fa(&matches)?,
        threshold,
        n_images: pairs.len(),
        detection: detection_totals(&matches),
        confusion: confusion_counts,
    })
}
