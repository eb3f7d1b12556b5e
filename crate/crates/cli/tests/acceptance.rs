//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use wafertex_core::fusion::{nyquist_min_scale, PYRAMID_STRIDES};
use wafertex_core::gradcheck::grad_check;
use wafertex_core::metrics::{
    average_precision, map_range, mask_iou_dice, match_detections, nms, pixel_auroc, ImageDetections, ScoredMatch,
};
use wafertex_core::mptce::{box_filter, dft2d, disturbance_map, idft2d, mptce_enhance, MptceConfig};
use wafertex_core::muse::{muse_forward, MuseBlock};
use wafertex_core::params::{count_params_flops, reference_layers, Layer};
use wafertex_core::rng::Stream;
use wafertex_core::synthgen::{gen_grating, gen_scene, standard_suite, GratingSpec};
use wafertex_core::tensor::conv2d;
use wafertex_core::{Shape, Tensor};

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dft_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = Stream::new(1);
    let (mut worst_dft, mut worst_parseval, mut worst_rt) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..50 {
        let h = rng.int_in(1, 32) as usize;
        let w = rng.int_in(1, 32) as usize;
        let x = Tensor::seeded_uniform(Shape::new(1, h, w), 100 + i, -1.0, 1.0);
        let s = dft2d(&x).unwrap();
        let naive = dft_naive(&x);
        let scale = naive.iter().map(|(r, i)| r.hypot(*i)).fold(0.0, f64::max).max(1e-300);
        let err = s
            .coeffs()
            .iter()
            .zip(&naive)
            .map(|(c, (r, i))| (c.re - r).hypot(c.im - i))
            .fold(0.0, f64::max);
        worst_dft = worst_dft.max(err / scale);

        let e_x: f64 = x.data().iter().map(|v| v * v).sum();
        let e_s: f64 = s.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() / (h * w) as f64;
        worst_parseval = worst_parseval.max((e_x - e_s).abs() / e_x.max(1e-300));

        let back = idft2d(&s).unwrap();
        let rt = back.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_rt = worst_rt.max(rt);
    }
    let t = start.elapsed();
    outcome(
        worst_dft <= 1e-6 && worst_parseval <= 1e-4 && worst_rt <= 1e-5 && t < Duration::from_secs(5),
        format!(
            "max rel err {worst_dft:.2e} (<=1e-6), parseval {worst_parseval:.2e} (<=1e-4), round trip {worst_rt:.2e} (<=1e-5), {:.2}s (<5s)",
            t.as_secs_f64()
        ),
    )
}

fn periodic_null() -> Outcome {
    let mut rng = Stream::new(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let h = [32, 48, 64, 96][rng.int_in(0, 3) as usize];
        let w = [32, 40, 64, 128][rng.int_in(0, 3) as usize];
        let u = rng.int_in(1, (w / 4) as i64) as usize;
        let v = rng.int_in(0, (h / 4) as i64) as usize;
        let amp = rng.uniform_in(0.2, 3.0);
        let g = GratingSpec::on_bin(u, v, h, w, amp, rng.uniform_in(0.0, std::f64::consts::TAU));
        let img = gen_grating(&g, h, w).unwrap();
        for top_k in [1, 8] {
            let cfg = MptceConfig {
                top_k,
                ..MptceConfig::default()
            };
            let d = disturbance_map(&img, &cfg).unwrap();
            worst = worst.max(d.max_abs() / amp);
        }
    }
    outcome(worst <= 1e-4, format!("max D / amplitude {worst:.2e} (<=1e-4) over top_k 1 and 8"))
}

fn anomaly_suite() -> Outcome {
    let start = Instant::now();
    let cfg = MptceConfig::default();
    let mut aurocs = Vec::new();
    let mut worst_ratio = f64::INFINITY;
    for (_, contrast, spec) in standard_suite() {
        let scene = gen_scene(&spec).unwrap();
        let d = disturbance_map(&scene.image, &cfg).unwrap();
        aurocs.push(pixel_auroc(d.plane(0), scene.mask.bits()).unwrap());
        if contrast == 0.5 {
            let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
            for (v, &m) in d.plane(0).iter().zip(scene.mask.bits()) {
                if m {
                    si += v;
                    ni += 1;
                } else {
                    so += v;
                    no += 1;
                }
            }
            worst_ratio = worst_ratio.min((si / ni as f64) / (so / no as f64));
        }
    }
    let t = start.elapsed();
    let mean = aurocs.iter().sum::<f64>() / aurocs.len() as f64;
    let min = aurocs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        mean >= 0.95 && min >= 0.90 && worst_ratio >= 5.0 && t < Duration::from_secs(60),
        format!(
            "{} scenes, AUROC mean {mean:.4} (>=0.95) min {min:.4} (>=0.90), worst in/out ratio at 0.5 {worst_ratio:.2} (>=5), {:.1}s (<60s)",
            aurocs.len(),
            t.as_secs_f64()
        ),
    )
}

fn degenerate_gates() -> Outcome {
    let f = Tensor::seeded_uniform(Shape::new(3, 24, 20), 9, -1.0, 1.0);
    let off = MptceConfig {
        alpha: 0.0,
        ..MptceConfig::default()
    };
    let y0 = mptce_enhance(&f, &off).unwrap();
    let identical = y0.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let saturated = MptceConfig {
        alpha: 1.0,
        bca_conv: box_filter(1e3),
        ..MptceConfig::default()
    };
    let y1 = mptce_enhance(&f, &saturated).unwrap();
    let err = y1.data().iter().zip(f.data()).map(|(a, b)| (a - 2.0 * b).abs()).fold(0.0, f64::max);
    outcome(
        identical && err <= 1e-6,
        format!("alpha=0 bit-identical: {identical}; saturated gate |F_C - 2F| {err:.2e} (<=1e-6)"),
    )
}

fn muse_contracts() -> Outcome {
    // zero gate: sigmoid(0) = 1/2 on every channel
    let x = Tensor::seeded_uniform(Shape::new(3, 10, 11), 4, -1.0, 1.0);
    let mut block = MuseBlock::seeded(3, 8, None, 21).unwrap();
    block.se_conv.weights.iter_mut().for_each(|w| *w = 0.0);
    if let Some(b) = block.se_conv.bias.as_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    let y = muse_forward(&x, &block).unwrap();
    let ctx = Tensor::concat_channels(&[&conv2d(&x, &block.local).unwrap(), &conv2d(&x, &block.surround).unwrap()]).unwrap();
    let half_exact = y.data().iter().zip(ctx.data()).all(|(a, b)| a.to_bits() == (0.5 * b).to_bits());

    let mut worst_grad = 0.0f64;
    for seed in 0..10 {
        let b = MuseBlock::seeded(2, 4, None, seed).unwrap();
        let xi = Tensor::seeded_uniform(Shape::new(2, 6, 7), 50 + seed, -1.0, 1.0);
        worst_grad = worst_grad.max(grad_check(&b, &xi, 1e-6).unwrap());
    }

    let mut rng = Stream::new(77);
    let mut shapes_ok = 0;
    for i in 0..20 {
        let cin = rng.int_in(1, 6) as usize;
        let cout = 2 * rng.int_in(1, 6) as usize;
        let (h, w) = (rng.int_in(1, 14) as usize, rng.int_in(1, 14) as usize);
        let divisors: Vec<usize> = (1..=cout).filter(|g| cout.is_multiple_of(*g)).collect();
        let groups = divisors[rng.int_in(0, divisors.len() as i64 - 1) as usize];
        let mut b = MuseBlock::seeded(cin, cout, Some(groups), i).unwrap();
        let expect_c = if i % 3 == 0 {
            let pw = rng.int_in(1, 9) as usize;
            b = b.with_projection(pw, i);
            pw
        } else {
            cout
        };
        let xi = Tensor::seeded_uniform(Shape::new(cin, h, w), i, -1.0, 1.0);
        if muse_forward(&xi, &b).unwrap().shape() == Shape::new(expect_c, h, w) {
            shapes_ok += 1;
        }
    }
    outcome(
        half_exact && worst_grad <= 1e-4 && shapes_ok == 20,
        format!("zero gate = 0.5*ctx exactly: {half_exact}; grad_check worst {worst_grad:.2e} (<=1e-4) over 10 seeds; shape law {shapes_ok}/20"),
    )
}

fn nyquist() -> Outcome {
    let instance = nyquist_min_scale(7.0, 8).unwrap();
    let mut monotone = true;
    for w in 1..=64 {
        let f: Vec<bool> = PYRAMID_STRIDES
            .iter()
            .map(|&s| nyquist_min_scale(w as f64, s).unwrap().feasible)
            .collect();
        // once infeasible at some stride, every coarser stride is too
        monotone &= f.windows(2).all(|p| p[0] || !p[1]);
        if w > 1 {
            for &s in &PYRAMID_STRIDES {
                let prev = nyquist_min_scale((w - 1) as f64, s).unwrap().feasible;
                monotone &= !prev || nyquist_min_scale(w as f64, s).unwrap().feasible;
            }
        }
    }
    outcome(
        !instance.feasible && monotone,
        format!(
            "w=7 stride 8 feasible={} (ratio {:.3}); monotone over w in 1..=64 and strides {:?}: {monotone}",
            instance.feasible, instance.ratio, PYRAMID_STRIDES
        ),
    )
}

fn metrics_oracles() -> Outcome {
    let mut rng = Stream::new(99);
    let (mut agree, mut ordered) = (0, true);
    for _ in 0..200 {
        let np = rng.int_in(0, 10) as usize;
        let ng = rng.int_in(0, 5) as usize;
        let preds = random_dets(&mut rng, np, 2, 8);
        let gts = random_dets(&mut rng, ng, 2, 8);
        let thr = rng.int_in(0, 10) as f64 / 10.0;
        let m = match_detections(&preds, &gts, thr, false).unwrap();
        let mut same = m.pred_to_gt == match_oracle(&preds, &gts, thr);
        let max_det = rng.int_in(1, 10) as usize;
        let kept = nms(&preds, thr, max_det).unwrap();
        let expect: Vec<_> = nms_oracle(&preds, thr, max_det).into_iter().map(|i| preds[i].clone()).collect();
        same &= kept == expect;
        if ng > 0 {
            let sm: Vec<ScoredMatch> = preds
                .iter()
                .zip(&m.pred_to_gt)
                .map(|(p, g)| ScoredMatch {
                    score: p.score,
                    is_tp: g.is_some(),
                })
                .collect();
            same &= (average_precision(&sm, ng).unwrap() - ap_oracle(&sm, ng)).abs() < 1e-12;
            let img = ImageDetections {
                image_id: "r".into(),
                preds: preds.clone(),
                gts: gts.clone(),
            };
            let s = map_range(&[img], 2, false).unwrap();
            ordered &= s.map50_95 <= s.map50;
        }
        agree += same as usize;
    }
    let fixture = [(0.9, true), (0.8, false), (0.7, true)].map(|(score, is_tp)| ScoredMatch { score, is_tp });
    let ap = average_precision(&fixture, 2).unwrap();
    let mut worst_identity = 0.0f64;
    for _ in 0..500 {
        let h = rng.int_in(1, 12) as usize;
        let w = rng.int_in(1, 12) as usize;
        let (da, db) = (rng.uniform(), rng.uniform());
        let a = random_mask(&mut rng, h, w, da);
        let b = random_mask(&mut rng, h, w, db);
        let (iou, dice) = mask_iou_dice(&a, &b).unwrap();
        worst_identity = worst_identity.max((dice - 2.0 * iou / (1.0 + iou)).abs());
    }
    outcome(
        agree == 200 && (ap - 5.0 / 6.0).abs() <= 1e-6 && worst_identity <= 1e-9 && ordered,
        format!(
            "oracle agreement {agree}/200; 5/6 fixture AP {ap:.6}; Dice-IoU identity worst {worst_identity:.1e} (<=1e-9); mAP50-95 <= mAP50 on every run: {ordered}"
        ),
    )
}

fn param_counter() -> Outcome {
    let fixtures = [
        ("conv in=3 out=64 k=3 s=2 p=1 h=640 w=640", 1_792),
        ("conv in=64 out=128 k=3 s=2 p=1 h=320 w=320", 73_856),
        ("conv in=128 out=256 k=3 s=2 p=1 h=160 w=160", 295_168),
        ("conv in=256 out=512 k=3 s=2 p=1 h=80 w=80", 1_180_160),
        ("conv in=512 out=1024 k=3 s=2 p=1 h=40 w=40", 4_719_616),
        ("dwconv c=1024 k=3 p=1 h=20 w=20", 10_240),
        ("conv in=1024 out=1024 k=1 h=20 w=20", 1_049_600),
    ];
    let exact = fixtures
        .iter()
        .filter(|(l, n)| Layer::parse(l).unwrap().cost().unwrap().params == *n)
        .count();
    let first_flops = Layer::parse(fixtures[0].0).unwrap().cost().unwrap().flops;
    let total = count_params_flops(&reference_layers()).unwrap();
    outcome(
        exact == fixtures.len() && first_flops == 353_894_400,
        format!(
            "{exact}/{} fixtures exact; reference table total {:.2}M params, {:.1} GFLOPs (published 11.6M, approximation only, head excluded)",
            fixtures.len(),
            total.params as f64 / 1e6,
            total.flops as f64 / 1e9
        ),
    )
}

fn run_pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_wafertex");
    let p = |s: &str| dir.join(s).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        ["--threads", threads, "gen", "--set", "preset=suite", "--set", "kind=contamination", "--set", "contrast=0.25", "--set", "seed=2", "--out", &p("gen")]
            .map(String::from)
            .to_vec(),
        ["--threads", threads, "enhance", "--input", &p("gen/image.pfm"), "--set", "detect_threshold=0.4", "--set", "class_id=4", "--out", &p("enh")]
            .map(String::from)
            .to_vec(),
        ["--threads", threads, "eval-seg", "--pred", &p("enh/detections.txt"), "--gt", &p("gen/gt.txt"), "--out", &p("eval")]
            .map(String::from)
            .to_vec(),
    ];
    for args in steps {
        let st = Command::new(bin).args(&args).status().unwrap();
        assert!(st.success(), "{args:?}");
    }
    let mut files = Vec::new();
    for sub in ["gen", "enh", "eval"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for n in names {
            files.push((format!("{sub}/{}", n.file_name().unwrap().to_string_lossy()), std::fs::read(&n).unwrap()));
        }
    }
    files
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let runs: Vec<_> = [("a", "1"), ("b", "1"), ("c", "4")]
        .iter()
        .map(|(d, t)| run_pipeline(&tmp.path().join(d), t))
        .collect();
    let same = runs[0] == runs[1] && runs[0] == runs[2];
    outcome(
        same && !runs[0].is_empty(),
        format!("{} artifacts byte-identical across two runs and 1 vs 4 threads: {same}", runs[0].len()),
    )
}

fn main() {
    let criteria: [Check; 9] = [
        ("dft correctness", dft_correctness),
        ("periodic null", periodic_null),
        ("anomaly decoupling", anomaly_suite),
        ("degenerate gates", degenerate_gates),
        ("muse contracts", muse_contracts),
        ("nyquist feasibility", nyquist),
        ("metrics oracle equivalence", metrics_oracles),
        ("param counter", param_counter),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += !o.pass as usize;
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
