mod common;

use common::*;
use wafertex_core::detection::Detection;
use wafertex_core::imageio::decode_pfm;
use wafertex_core::mask::{BoundingBox, Mask};
use wafertex_core::metrics::{
    average_precision, confusion_matrix, map_range, mask_iou_dice, match_detections, nms, pixel_auroc,
    ImageDetections, ScoredMatch,
};
use wafertex_core::mptce::{dft2d, disturbance_map, idft2d, MptceConfig};
use wafertex_core::rng::Stream;
use wafertex_core::synthgen::{gen_scene, inject_anomaly, suite_scene, AnomalyKind, AnomalyShape, AnomalySpec};
use wafertex_core::tensor::{conv2d, global_avg_pool, pointwise, upsample_nearest, PointwiseKind};
use wafertex_core::{ConvSpec, Shape, Tensor};

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn conv_matches_six_loop() {
    let mut rng = Stream::new(11);
    for case in 0..60 {
        let groups = [1, 2, 3][rng.int_in(0, 2) as usize];
        let cin = groups * rng.int_in(1, 3) as usize;
        let cout = groups * rng.int_in(1, 3) as usize;
        let k = rng.int_in(1, 4) as usize;
        let dilation = rng.int_in(1, 3) as usize;
        let stride = rng.int_in(1, 3) as usize;
        let padding = rng.int_in(0, 3) as usize;
        let ext = dilation * (k - 1) + 1;
        let h = (ext.saturating_sub(2 * padding)).max(1) + rng.int_in(0, 6) as usize;
        let w = (ext.saturating_sub(2 * padding)).max(1) + rng.int_in(0, 6) as usize;
        let mut spec = ConvSpec::seeded(cin, cout, k, groups, case, 1.0)
            .with_stride(stride)
            .with_padding(padding)
            .with_dilation(dilation);
        if case % 3 == 0 {
            spec = spec.without_bias();
        }
        let x = Tensor::seeded_uniform(Shape::new(cin, h, w), case + 1000, -1.0, 1.0);
        let fast = conv2d(&x, &spec).unwrap();
        assert!(close(&fast, &conv_naive(&x, &spec), 1e-12), "case {case}");
    }
}

#[test]
fn upsample_index_map() {
    let x = Tensor::seeded_uniform(Shape::new(2, 3, 4), 5, -1.0, 1.0);
    for f in 1..4 {
        let up = upsample_nearest(&x, f).unwrap();
        assert_eq!(up.shape(), Shape::new(2, 3 * f, 4 * f));
        for c in 0..2 {
            for y in 0..3 * f {
                for xx in 0..4 * f {
                    assert_eq!(up.at(c, y, xx), x.at(c, y / f, xx / f));
                }
            }
        }
    }
}

#[test]
fn gap_matches_sorted_sum() {
    let x = Tensor::seeded_uniform(Shape::new(3, 17, 9), 8, -1e3, 1e3);
    let g = global_avg_pool(&x).unwrap();
    for c in 0..3 {
        let mut v = x.plane(c).to_vec();
        v.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((g.at(c, 0, 0) - mean).abs() <= 1e-9 * mean.abs().max(1.0));
    }
}

#[test]
fn pointwise_scalar_loop() {
    let x = Tensor::seeded_uniform(Shape::new(2, 4, 5), 1, -1.0, 1.0);
    let y = Tensor::seeded_uniform(Shape::new(2, 4, 5), 2, -1.0, 1.0);
    let gate = Tensor::seeded_uniform(Shape::new(2, 1, 1), 3, -1.0, 1.0);
    let sum = pointwise(&x, &y, PointwiseKind::Add).unwrap();
    let prod = pointwise(&x, &gate, PointwiseKind::Mul).unwrap();
    for c in 0..2 {
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(sum.at(c, i, j), x.at(c, i, j) + y.at(c, i, j));
                assert_eq!(prod.at(c, i, j), x.at(c, i, j) * gate.at(c, 0, 0));
            }
        }
    }
}

#[test]
fn dft_matches_naive_on_odd_sizes() {
    for (h, w) in [(1, 1), (1, 7), (5, 3), (6, 10), (9, 9)] {
        let x = Tensor::seeded_uniform(Shape::new(1, h, w), (h * 31 + w) as u64, -1.0, 1.0);
        let s = dft2d(&x).unwrap();
        let naive = dft_naive(&x);
        for (c, (re, im)) in s.coeffs().iter().zip(naive) {
            assert!((c.re - re).abs() < 1e-9 && (c.im - im).abs() < 1e-9);
        }
        assert!(close(&idft2d(&s).unwrap(), &x, 1e-12));
    }
}

#[test]
fn ap_fixture_tp_fp_tp() {
    let m = [
        ScoredMatch { score: 0.9, is_tp: true },
        ScoredMatch { score: 0.8, is_tp: false },
        ScoredMatch { score: 0.7, is_tp: true },
    ];
    let ap = average_precision(&m, 2).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    assert!((ap_oracle(&m, 2) - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn mask_overlap_pixel_counts() {
    // 4 px each, 1 px shared
    let a = Mask::from_fn(4, 4, |y, x| y < 2 && x < 2);
    let b = Mask::from_fn(4, 4, |y, x| (1..3).contains(&y) && (1..3).contains(&x));
    let (iou, dice) = mask_iou_dice(&a, &b).unwrap();
    assert!((iou - 1.0 / 7.0).abs() < 1e-15);
    assert!((dice - 0.25).abs() < 1e-15);
}

#[test]
fn random_instances_match_oracles() {
    let mut rng = Stream::new(2024);
    for _ in 0..300 {
        let np = rng.int_in(0, 10) as usize;
        let ng = rng.int_in(0, 5) as usize;
        let preds = random_dets(&mut rng, np, 2, 8);
        let gts = random_dets(&mut rng, ng, 2, 8);
        let thr = [0.0, 0.3, 0.5, 0.7, 1.0][rng.int_in(0, 4) as usize];

        let m = match_detections(&preds, &gts, thr, false).unwrap();
        assert_eq!(m.pred_to_gt, match_oracle(&preds, &gts, thr));
        assert_eq!(m.tp() + m.fn_(), ng);
        assert_eq!(m.tp() + m.fp(), np);

        let max_det = rng.int_in(1, 10) as usize;
        let kept = nms(&preds, thr, max_det).unwrap();
        let expect: Vec<Detection> = nms_oracle(&preds, thr, max_det).into_iter().map(|i| preds[i].clone()).collect();
        assert_eq!(kept, expect);

        if ng > 0 {
            let scored: Vec<ScoredMatch> = preds
                .iter()
                .zip(&m.pred_to_gt)
                .map(|(p, g)| ScoredMatch { score: p.score, is_tp: g.is_some() })
                .collect();
            let ap = average_precision(&scored, ng).unwrap();
            assert!((ap - ap_oracle(&scored, ng)).abs() < 1e-12);
        }
    }
}

/// All injective partial assignments of predictions to ground truth with
/// IoU >= `thr`.
fn enumerate_assignments(ious: &[Vec<f64>], thr: f64) -> Vec<Vec<Option<usize>>> {
    fn go(p: usize, ious: &[Vec<f64>], thr: f64, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if p == ious.len() {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        go(p + 1, ious, thr, cur, out);
        cur.pop();
        for g in 0..ious[p].len() {
            if ious[p][g] >= thr && !cur.contains(&Some(g)) {
                cur.push(Some(g));
                go(p + 1, ious, thr, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(0, ious, thr, &mut Vec::new(), &mut out);
    out
}

/// Greedy matching is the feasible assignment that is best in score order:
/// compared prediction by prediction, a match beats no match, higher IoU
/// beats lower, and a lower ground-truth index breaks ties.
#[test]
fn three_preds_two_gts_enumeration() {
    let b = |x1, y1, x2, y2| BoundingBox::new(x1, y1, x2, y2).unwrap();
    let gts = vec![
        Detection::new(0, 1.0, b(0.0, 0.0, 4.0, 4.0)),
        Detection::new(0, 1.0, b(2.0, 0.0, 6.0, 4.0)),
    ];
    let preds = vec![
        Detection::new(0, 0.6, b(2.0, 0.0, 6.0, 4.0)),
        Detection::new(0, 0.9, b(1.0, 0.0, 5.0, 4.0)),
        Detection::new(0, 0.8, b(0.0, 0.0, 4.0, 4.0)),
    ];
    let order = [1usize, 2, 0];
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&p| gts.iter().map(|g| box_iou_cells(&preds[p].bbox, &g.bbox)).collect())
        .collect();
    let key = |a: &Vec<Option<usize>>| -> Vec<(bool, f64, i64)> {
        a.iter()
            .enumerate()
            .map(|(k, g)| match g {
                Some(g) => (true, ious[k][*g], -(*g as i64)),
                None => (false, 0.0, 0),
            })
            .collect()
    };
    let all = enumerate_assignments(&ious, 0.5);
    assert_eq!(all.len(), 8);
    let best = all
        .iter()
        .max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .unwrap();
    let mut expect = vec![None; 3];
    for (k, &p) in order.iter().enumerate() {
        expect[p] = best[k];
    }
    let m = match_detections(&preds, &gts, 0.5, false).unwrap();
    assert_eq!(m.pred_to_gt, expect);
    // the top prediction sits at IoU 0.6 with both; it takes the first,
    // the exact copy of that box is left over, the last takes the second
    assert_eq!(m.pred_to_gt, vec![Some(1), Some(0), None]);
}

#[test]
fn confusion_tally() {
    let b = |x: f64| BoundingBox::new(x, 0.0, x + 2.0, 2.0).unwrap();
    let img = ImageDetections {
        image_id: "t".into(),
        gts: vec![Detection::new(0, 1.0, b(0.0)), Detection::new(1, 1.0, b(10.0)), Detection::new(1, 1.0, b(20.0))],
        preds: vec![
            Detection::new(0, 0.9, b(0.0)),  // class 0 -> class 0
            Detection::new(0, 0.8, b(10.0)), // class 1 read as class 0
            Detection::new(1, 0.7, b(30.0)), // background read as class 1
        ],
    };
    let raw = confusion_matrix(std::slice::from_ref(&img), 2, 0.5, false, false).unwrap();
    let mut tally = vec![vec![0.0; 3]; 3];
    tally[0][0] += 1.0;
    tally[0][1] += 1.0;
    tally[1][2] += 1.0;
    tally[2][1] += 1.0;
    assert_eq!(raw, tally);
    let norm = confusion_matrix(&[img], 2, 0.5, false, true).unwrap();
    assert_eq!(norm[0][1], 0.5);
    assert_eq!(norm[2][1], 0.5);
    for col in 0..3 {
        let s: f64 = norm.iter().map(|r| r[col]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn threshold_recompute_map() {
    // IoU 8/12 = 0.667: passes 0.50..0.65, fails from 0.70
    let gt = Detection::new(0, 1.0, BoundingBox::new(0.0, 0.0, 4.0, 3.0).unwrap());
    let pred = Detection::new(0, 0.9, BoundingBox::new(0.0, 0.0, 4.0, 2.0).unwrap());
    let img = ImageDetections { image_id: "a".into(), preds: vec![pred], gts: vec![gt] };
    let s = map_range(&[img], 1, false).unwrap();
    assert_eq!(s.map50, 1.0);
    assert!((s.map50_95 - 0.4).abs() < 1e-12);
}

#[test]
fn disk_record_box_is_scan_bounds() {
    let spec = AnomalySpec {
        shape: AnomalyShape::Disk { radius: 5.5 },
        center: (20.3, 14.8),
        contrast: 1.0,
        class_id: None,
    };
    let (_, mask) = inject_anomaly(&Tensor::zeros(1, 40, 48), &spec).unwrap();
    let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..40 {
        for x in 0..48 {
            if mask.get(y, x) {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    let scene = gen_scene(&wafertex_core::synthgen::SceneSpec {
        height: 40,
        width: 48,
        gratings: vec![],
        anomalies: vec![spec],
        noise_sigma: 0.0,
        seed: 0,
    })
    .unwrap();
    let b = scene.records[0].bbox;
    assert_eq!((b.x1, b.y1, b.x2, b.y2), (x1 as f64, y1 as f64, x2 as f64, y2 as f64));
}

#[test]
fn pfm_big_endian_fixture() {
    // 2x1 image, positive scale = big-endian, rows stored bottom-up
    let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
    for v in [3.0f32, 4.0, 1.0, 2.0] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    let t = decode_pfm(&bytes).unwrap();
    assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    let mut le = b"Pf\n2 2\n-1.0\n".to_vec();
    for v in [3.0f32, 4.0, 1.0, 2.0] {
        le.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(decode_pfm(&le).unwrap(), t);
}

#[test]
fn synthetic_scene_disturbance_separates_anomaly() {
    let spec = suite_scene(AnomalyKind::Disk, 0.5, 2);
    let scene = gen_scene(&spec).unwrap();
    let d = disturbance_map(&scene.image, &MptceConfig::default()).unwrap();
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
    for (v, &m) in d.plane(0).iter().zip(scene.mask.bits()) {
        if m {
            inside += v;
            n_in += 1;
        } else {
            outside += v;
            n_out += 1;
        }
    }
    let ratio = (inside / n_in as f64) / (outside / n_out as f64);
    assert!(ratio > 5.0, "ratio {ratio}");
    assert!(pixel_auroc(d.plane(0), scene.mask.bits()).unwrap() > 0.95);
}
