//! Text rendering of metric reports.
//!
//! Every real is printed with six decimals. `{:.6}` expands the binary
//! value exactly and breaks exact ties to even, which is the rounding the
//! reports promise; negative zero is printed as zero.

use std::fmt::Write as _;

use crate::detection::CLASS_NAMES;
use crate::metrics::{coco_thresholds, MetricsReport};

pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn class_label(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map_or_else(|| format!("class{c}"), |n| n.to_string())
}

/// Writes `key = value` lines with keys padded to a common width.
pub fn aligned(pairs: &[(String, String)]) -> String {
    let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k:<width$} = {v}");
    }
    out
}

/// Human-oriented summary. Per-class rows are emitted only for classes
/// with ground truth.
pub fn render_report(r: &MetricsReport) -> String {
    let mut pairs: Vec<(String, String)> = vec![
        ("map50".into(), fixed6(r.map50)),
        ("map50_95".into(), fixed6(r.map50_95)),
        ("precision".into(), fixed6(r.precision)),
        ("recall".into(), fixed6(r.recall)),
        ("mean_iou".into(), fixed6(r.mean_iou)),
        ("mean_dice".into(), fixed6(r.mean_dice)),
        ("tp".into(), r.counts.tp.to_string()),
        ("fp".into(), r.counts.fp.to_string()),
        ("fn".into(), r.counts.fn_.to_string()),
    ];
    for (c, ap) in r.per_class_ap.iter().enumerate() {
        if let Some(ap) = ap {
            let mean = ap.iter().sum::<f64>() / ap.len() as f64;
            pairs.push((format!("ap50.{}", class_label(c)), fixed6(ap[0])));
            pairs.push((format!("ap50_95.{}", class_label(c)), fixed6(mean)));
        }
    }
    aligned(&pairs)
}

/// Machine-oriented dump: one space-separated fact per line.
///
/// ```text
/// ap <class_id> <threshold> <value>
/// confusion <pred_row> <gt_col> <value>
/// ```
///
/// Row and column `N` stand for background.
pub fn render_dump(r: &MetricsReport) -> String {
    let mut out = String::new();
    let thresholds = coco_thresholds();
    for (c, ap) in r.per_class_ap.iter().enumerate() {
        let Some(ap) = ap else { continue };
        for (t, v) in thresholds.iter().zip(ap) {
            let _ = writeln!(out, "ap {c} {} {}", fixed6(*t), fixed6(*v));
        }
    }
    for (i, row) in r.confusion.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(out, "confusion {i} {j} {}", fixed6(*v));
        }
    }
    out
}
