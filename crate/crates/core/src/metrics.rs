//! Segmentation and detection metrics.
//!
//! Conventions:
//! - `0 / 0` precision (no predictions) and recall (no ground truth) are 1.
//! - IoU and Dice of two empty masks are 1.
//! - AP integrates the monotone precision envelope over every recall
//!   breakpoint (all-point interpolation).
//! - Classes with no ground truth anywhere are left out of class means.
//! - Confusion columns are ground-truth classes, rows predicted classes;
//!   index `N` is background. Normalisation divides each non-empty column
//!   by its total; empty columns stay zero.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::mask::{BoundingBox, Mask};

/// Pixel IoU and Dice of two binary maps.
pub fn mask_iou_dice(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    if !pred.same_grid(gt) {
        return Err(Error::invalid(
            "mask_iou_dice",
            format!(
                "{}x{} vs {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            ),
        ));
    }
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    let union = p + g - inter;
    if union == 0 {
        return Ok((1.0, 1.0));
    }
    Ok((inter as f64 / union as f64, 2.0 * inter as f64 / (p + g) as f64))
}

/// Dice of two boxes treated as point sets.
pub fn box_dice(a: &BoundingBox, b: &BoundingBox) -> f64 {
    2.0 * a.intersection(b) / (a.area() + b.area())
}

/// Indices sorted by descending score; equal scores keep input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Greedy per-class suppression of boxes overlapping a higher-scored
/// keeper by more than `iou_threshold`, capped at `max_det` survivors.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_det: usize) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::invalid(
            "nms",
            format!("IoU threshold {iou_threshold} outside [0, 1]"),
        ));
    }
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::invalid("nms", format!("invalid score {}", d.score)));
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        if kept.len() == max_det {
            break;
        }
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == d.class_id && dets[k].bbox.iou(&d.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept.into_iter().map(|i| dets[i].clone()).collect())
}

/// Overlap of two instances by box or by decoded mask.
pub fn instance_iou(a: &Detection, b: &Detection, use_mask_iou: bool) -> Result<f64> {
    if !use_mask_iou {
        return Ok(a.bbox.iou(&b.bbox));
    }
    match (&a.mask, &b.mask) {
        (Some(ma), Some(mb)) => Ok(mask_iou_dice(&ma.decode()?, &mb.decode()?)?.0),
        _ => Err(Error::invalid("match_detections", "mask IoU needs masks on both sides")),
    }
}

fn iou_matrix(preds: &[Detection], gts: &[Detection], use_mask_iou: bool) -> Result<Vec<Vec<f64>>> {
    if use_mask_iou {
        let decode = |d: &Detection| -> Result<Mask> {
            d.mask
                .as_ref()
                .ok_or_else(|| Error::invalid("match_detections", "mask IoU needs masks on both sides"))?
                .decode()
        };
        let pm: Vec<Mask> = preds.iter().map(decode).collect::<Result<_>>()?;
        let gm: Vec<Mask> = gts.iter().map(decode).collect::<Result<_>>()?;
        pm.iter()
            .map(|p| gm.iter().map(|g| Ok(mask_iou_dice(p, g)?.0)).collect())
            .collect()
    } else {
        Ok(preds
            .iter()
            .map(|p| gts.iter().map(|g| p.bbox.iou(&g.bbox)).collect())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    /// Matched ground-truth index per prediction.
    pub pred_to_gt: Vec<Option<usize>>,
    pub gt_to_pred: Vec<Option<usize>>,
    /// IoU of each matched pair, indexed like `pred_to_gt`.
    pub pred_iou: Vec<f64>,
}

impl Matching {
    pub fn tp(&self) -> usize {
        self.pred_to_gt.iter().filter(|m| m.is_some()).count()
    }

    pub fn fp(&self) -> usize {
        self.pred_to_gt.len() - self.tp()
    }

    pub fn fn_(&self) -> usize {
        self.gt_to_pred.iter().filter(|m| m.is_none()).count()
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp(),
            fp: self.fp(),
            fn_: self.fn_(),
        }
    }
}

fn greedy_match(
    preds: &[Detection],
    gts: &[Detection],
    ious: &[Vec<f64>],
    iou_threshold: f64,
    class_aware: bool,
) -> Matching {
    let mut m = Matching {
        pred_to_gt: vec![None; preds.len()],
        gt_to_pred: vec![None; gts.len()],
        pred_iou: vec![0.0; preds.len()],
    };
    for p in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if m.gt_to_pred[g].is_some() || (class_aware && gt.class_id != preds[p].class_id) {
                continue;
            }
            let iou = ious[p][g];
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            m.pred_to_gt[p] = Some(g);
            m.gt_to_pred[g] = Some(p);
            m.pred_iou[p] = iou;
        }
    }
    m
}

/// Greedy matching in descending score: each prediction takes the
/// unmatched same-class ground truth with the highest IoU, if that IoU
/// reaches `iou_threshold`.
pub fn match_detections(
    preds: &[Detection],
    gts: &[Detection],
    iou_threshold: f64,
    use_mask_iou: bool,
) -> Result<Matching> {
    let ious = iou_matrix(preds, gts, use_mask_iou)?;
    Ok(greedy_match(preds, gts, &ious, iou_threshold, true))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn precision_recall(c: Counts) -> (f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// One ranked prediction: its score and whether it matched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub is_tp: bool,
}

/// All-point interpolated average precision over `num_gt` ground truths.
pub fn average_precision(matches: &[ScoredMatch], num_gt: usize) -> Result<f64> {
    if num_gt == 0 {
        return Err(Error::Undefined("average precision without ground truth"));
    }
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&a, &b| {
        matches[b]
            .score
            .partial_cmp(&matches[a].score)
            .unwrap_or(Ordering::Equal)
    });
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        tp += matches[i].is_tp as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // envelope: precision at rank k becomes the max over ranks >= k
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(ap)
}

/// Predictions and ground truth for one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub preds: Vec<Detection>,
    pub gts: Vec<Detection>,
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSummary {
    /// `per_class_ap[c][t]`, `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<[f64; 10]>>,
    pub map50: f64,
    pub map50_95: f64,
}

fn check_classes(images: &[ImageDetections], num_classes: usize) -> Result<()> {
    for img in images {
        for d in img.preds.iter().chain(&img.gts) {
            if d.class_id as usize >= num_classes {
                return Err(Error::invalid(
                    "metrics",
                    format!("class {} in image {} exceeds {num_classes} classes", d.class_id, img.image_id),
                ));
            }
        }
    }
    Ok(())
}

/// Per-class AP at each COCO threshold, then class mean (mAP50) and
/// threshold mean of class means (mAP50-95).
pub fn map_range(images: &[ImageDetections], num_classes: usize, use_mask_iou: bool) -> Result<MapSummary> {
    if num_classes == 0 {
        return Err(Error::invalid("map_range", "need at least one class"));
    }
    check_classes(images, num_classes)?;
    let thresholds = coco_thresholds();
    let ious: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|img| iou_matrix(&img.preds, &img.gts, use_mask_iou))
        .collect::<Result<_>>()?;

    let mut per_class_ap = vec![None; num_classes];
    for (class, slot) in per_class_ap.iter_mut().enumerate() {
        let num_gt: usize = images
            .iter()
            .map(|img| img.gts.iter().filter(|g| g.class_id as usize == class).count())
            .sum();
        if num_gt == 0 {
            continue;
        }
        let mut aps = [0.0; 10];
        for (t, &thr) in thresholds.iter().enumerate() {
            let mut scored = Vec::new();
            for (img, iou) in images.iter().zip(&ious) {
                let m = greedy_match(&img.preds, &img.gts, iou, thr, true);
                for (p, d) in img.preds.iter().enumerate() {
                    if d.class_id as usize == class {
                        scored.push(ScoredMatch {
                            score: d.score,
                            is_tp: m.pred_to_gt[p].is_some(),
                        });
                    }
                }
            }
            aps[t] = average_precision(&scored, num_gt)?;
        }
        *slot = Some(aps);
    }

    let present: Vec<&[f64; 10]> = per_class_ap.iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::Undefined("mAP without any ground truth"));
    }
    let n = present.len() as f64;
    let class_mean = |t: usize| present.iter().map(|a| a[t]).sum::<f64>() / n;
    let map50 = class_mean(0);
    let map50_95 = (0..10).map(class_mean).sum::<f64>() / 10.0;
    Ok(MapSummary {
        per_class_ap,
        map50,
        map50_95,
    })
}

/// `(N + 1) x (N + 1)` tally from class-agnostic greedy matching:
/// `m[pred][gt]`, with missed ground truth in row `N` and unmatched
/// predictions in column `N`.
pub fn confusion_matrix(
    images: &[ImageDetections],
    num_classes: usize,
    iou_threshold: f64,
    use_mask_iou: bool,
    normalize: bool,
) -> Result<Vec<Vec<f64>>> {
    check_classes(images, num_classes)?;
    let bg = num_classes;
    let mut m = vec![vec![0.0; num_classes + 1]; num_classes + 1];
    for img in images {
        let ious = iou_matrix(&img.preds, &img.gts, use_mask_iou)?;
        let matching = greedy_match(&img.preds, &img.gts, &ious, iou_threshold, false);
        for (p, gt) in matching.pred_to_gt.iter().enumerate() {
            let row = img.preds[p].class_id as usize;
            let col = gt.map_or(bg, |g| img.gts[g].class_id as usize);
            m[row][col] += 1.0;
        }
        for (g, pred) in matching.gt_to_pred.iter().enumerate() {
            if pred.is_none() {
                m[bg][img.gts[g].class_id as usize] += 1.0;
            }
        }
    }
    if normalize {
        for col in 0..=num_classes {
            let total: f64 = m.iter().map(|row| row[col]).sum();
            if total > 0.0 {
                m.iter_mut().for_each(|row| row[col] /= total);
            }
        }
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub num_classes: usize,
    pub use_mask_iou: bool,
    /// Threshold for precision, recall, overlap means and the confusion matrix.
    pub iou_threshold: f64,
    /// Optional suppression applied to predictions first: `(iou, max_det)`.
    pub nms: Option<(f64, usize)>,
}

impl EvalConfig {
    pub fn new(num_classes: usize, use_mask_iou: bool) -> Self {
        Self {
            num_classes,
            use_mask_iou,
            iou_threshold: 0.5,
            nms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_class_ap: Vec<Option<[f64; 10]>>,
    pub map50: f64,
    pub map50_95: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean overlap of matched pairs (mask or box, per the config).
    pub mean_iou: f64,
    pub mean_dice: f64,
    pub counts: Counts,
    pub confusion: Vec<Vec<f64>>,
}

pub fn evaluate(images: &[ImageDetections], cfg: &EvalConfig) -> Result<MetricsReport> {
    let filtered;
    let images = match cfg.nms {
        Some((thr, max_det)) => {
            filtered = images
                .iter()
                .map(|img| {
                    Ok(ImageDetections {
                        image_id: img.image_id.clone(),
                        preds: nms(&img.preds, thr, max_det)?,
                        gts: img.gts.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            &filtered[..]
        }
        None => images,
    };
    let summary = map_range(images, cfg.num_classes, cfg.use_mask_iou)?;

    let mut counts = Counts::default();
    let (mut iou_sum, mut dice_sum, mut pairs) = (0.0, 0.0, 0usize);
    for img in images {
        let m = match_detections(&img.preds, &img.gts, cfg.iou_threshold, cfg.use_mask_iou)?;
        counts += m.counts();
        for (p, g) in m.pred_to_gt.iter().enumerate() {
            let Some(g) = *g else { continue };
            let (pred, gt) = (&img.preds[p], &img.gts[g]);
            let (iou, dice) = if cfg.use_mask_iou {
                match (&pred.mask, &gt.mask) {
                    (Some(a), Some(b)) => mask_iou_dice(&a.decode()?, &b.decode()?)?,
                    _ => unreachable!("matching already required masks"),
                }
            } else {
                (pred.bbox.iou(&gt.bbox), box_dice(&pred.bbox, &gt.bbox))
            };
            iou_sum += iou;
            dice_sum += dice;
            pairs += 1;
        }
    }
    let (precision, recall) = precision_recall(counts);
    let (mean_iou, mean_dice) = if pairs > 0 {
        (iou_sum / pairs as f64, dice_sum / pairs as f64)
    } else if counts.fp == 0 && counts.fn_ == 0 {
        (1.0, 1.0)
    } else {
        (0.0, 0.0)
    };
    let confusion = confusion_matrix(images, cfg.num_classes, cfg.iou_threshold, cfg.use_mask_iou, true)?;
    Ok(MetricsReport {
        per_class_ap: summary.per_class_ap,
        map50: summary.map50,
        map50_95: summary.map50_95,
        precision,
        recall,
        mean_iou,
        mean_dice,
        counts,
        confusion,
    })
}

/// Area under the ROC curve of `scores` against binary `labels`
/// (Mann–Whitney statistic with mid-ranks for ties).
pub fn pixel_auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("auroc", "scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUROC with a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}
