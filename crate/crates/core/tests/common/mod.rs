//! Slow, obviously-correct reference implementations used as test oracles.

#![allow(dead_code)]

use wafertex_core::detection::Detection;
use wafertex_core::mask::{BoundingBox, Mask};
use wafertex_core::metrics::ScoredMatch;
use wafertex_core::rng::Stream;
use wafertex_core::{ConvSpec, Tensor};

/// Direct six-loop cross-correlation with zero padding.
pub fn conv_naive(x: &Tensor, s: &ConvSpec) -> Tensor {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let ext_h = (s.dilation * (s.kernel_h - 1) + 1) as isize;
    let ext_w = (s.dilation * (s.kernel_w - 1) + 1) as isize;
    let p = s.padding as isize;
    let ho = ((h + 2 * p - ext_h) / s.stride as isize + 1) as usize;
    let wo = ((w + 2 * p - ext_w) / s.stride as isize + 1) as usize;
    let ipg = s.in_channels / s.groups;
    let opg = s.out_channels / s.groups;
    let mut out = Tensor::zeros(s.out_channels, ho, wo);
    for o in 0..s.out_channels {
        let g = o / opg;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = s.bias.as_ref().map_or(0.0, |b| b[o]);
                for i in 0..ipg {
                    for ky in 0..s.kernel_h {
                        for kx in 0..s.kernel_w {
                            let y = (oy * s.stride + ky * s.dilation) as isize - p;
                            let xx = (ox * s.stride + kx * s.dilation) as isize - p;
                            if y < 0 || xx < 0 || y >= h || xx >= w {
                                continue;
                            }
                            let wi = ((o * ipg + i) * s.kernel_h + ky) * s.kernel_w + kx;
                            acc += s.weights[wi] * x.at(g * ipg + i, y as usize, xx as usize);
                        }
                    }
                }
                out.set(o, oy, ox, acc);
            }
        }
    }
    out
}

/// `O(N^2)` DFT, `X[u, v] = sum f(y, x) exp(-2 pi i (u x / W + v y / H))`,
/// returned as `(re, im)` at index `v * W + u`.
pub fn dft_naive(x: &Tensor) -> Vec<(f64, f64)> {
    let (h, w) = (x.height(), x.width());
    let mut out = vec![(0.0, 0.0); h * w];
    for v in 0..h {
        for u in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    // reduce the phase exactly in integers before scaling
                    let num = ((u * xx * h + v * y * w) % (h * w)) as f64;
                    let ang = -2.0 * std::f64::consts::PI * num / (h * w) as f64;
                    let f = x.at(0, y, xx);
                    re += f * ang.cos();
                    im += f * ang.sin();
                }
            }
            out[v * w + u] = (re, im);
        }
    }
    out
}

/// Box IoU by counting unit cells; boxes must have integer corners.
pub fn box_iou_cells(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inside = |bx: &BoundingBox, x: f64, y: f64| x >= bx.x1 && x < bx.x2 && y >= bx.y1 && y < bx.y2;
    let (mut inter, mut union) = (0u32, 0u32);
    let lo_x = a.x1.min(b.x1) as i64;
    let hi_x = a.x2.max(b.x2) as i64;
    let lo_y = a.y1.min(b.y1) as i64;
    let hi_y = a.y2.max(b.y2) as i64;
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
            inter += (ia && ib) as u32;
            union += (ia || ib) as u32;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Position of `i` in descending-score order, input order breaking ties.
fn rank_before(dets: &[Detection], a: usize, b: usize) -> bool {
    dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b)
}

pub fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if rank_before(dets, left[k], left[best]) {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Selection-order NMS over cell-count IoU.
pub fn nms_oracle(dets: &[Detection], thr: f64, max_det: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in ranked(dets) {
        if kept.len() == max_det {
            break;
        }
        let hit = kept
            .iter()
            .any(|&k| dets[k].class_id == dets[i].class_id && box_iou_cells(&dets[k].bbox, &dets[i].bbox) > thr);
        if !hit {
            kept.push(i);
        }
    }
    kept
}

/// Greedy matching over cell-count IoU: `pred -> gt`.
pub fn match_oracle(preds: &[Detection], gts: &[Detection], thr: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; preds.len()];
    for p in ranked(preds) {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if taken[g] || gts[g].class_id != preds[p].class_id {
                continue;
            }
            let iou = box_iou_cells(&preds[p].bbox, &gts[g].bbox);
            if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[p] = Some(g);
        }
    }
    out
}

/// AP as the sum over true-positive ranks `k` of `max_{j >= k} P(j) / n_gt`.
pub fn ap_oracle(matches: &[ScoredMatch], num_gt: usize) -> f64 {
    let mut idx: Vec<usize> = (0..matches.len()).collect();
    idx.sort_by(|&a, &b| matches[b].score.total_cmp(&matches[a].score).then(a.cmp(&b)));
    let hits: Vec<bool> = idx.iter().map(|&i| matches[i].is_tp).collect();
    let precision_at = |j: usize| hits[..=j].iter().filter(|&&t| t).count() as f64 / (j + 1) as f64;
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            let env = (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            ap += env / num_gt as f64;
        }
    }
    ap
}

/// Random integer-cornered box inside a `size x size` frame.
pub fn random_box(rng: &mut Stream, size: i64) -> BoundingBox {
    let x1 = rng.int_in(0, size - 2);
    let y1 = rng.int_in(0, size - 2);
    let x2 = rng.int_in(x1 + 1, size);
    let y2 = rng.int_in(y1 + 1, size);
    BoundingBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).unwrap()
}

/// Random detections with scores on a coarse grid so ties occur.
pub fn random_dets(rng: &mut Stream, n: usize, classes: i64, size: i64) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let score = rng.int_in(0, 10) as f64 / 10.0;
            Detection::new(rng.int_in(0, classes - 1) as u32, score, random_box(rng, size))
        })
        .collect()
}

pub fn random_mask(rng: &mut Stream, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.uniform() < density)
}
