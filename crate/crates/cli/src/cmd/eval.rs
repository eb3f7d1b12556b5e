//! `eval-seg` and `eval-det`.

use std::path::Path;

use rayon::prelude::*;
use wafertex_core::detection::CLASS_NAMES;
use wafertex_core::metrics::{evaluate, EvalConfig, MetricsReport};
use wafertex_core::records::{group_by_image, parse_records};
use wafertex_core::report::{render_dump, render_report};

use crate::config::Config;
use crate::error::CliError;
use crate::fsio::{read_text, OutDir};

pub fn run(mut cfg: Config, use_mask_iou: bool, pred: &Path, gt: &Path, out: &OutDir) -> Result<(), CliError> {
    let mut ec = EvalConfig::new(cfg.get_or("num_classes", CLASS_NAMES.len())?, use_mask_iou);
    ec.iou_threshold = cfg.get_or("iou_threshold", ec.iou_threshold)?;
    let nms_iou: Option<f64> = cfg.get("nms_iou")?;
    let max_det = cfg.get_or("max_det", 100usize)?;
    let dump = cfg.flag("dump", true)?;
    cfg.finish()?;
    ec.nms = nms_iou.map(|t| (t, max_det));
    if !(0.0..=1.0).contains(&ec.iou_threshold) {
        return Err(CliError::invalid("iou_threshold must lie in [0, 1]"));
    }

    // the two files parse independently; results come back in order
    let parsed: Vec<_> = [pred, gt]
        .par_iter()
        .map(|p| read_text(p).and_then(|t| parse_records(&t).map_err(|e| CliError::core_at(p, e))))
        .collect();
    let mut parsed = parsed.into_iter();
    let preds = parsed.next().unwrap()?;
    let gts = parsed.next().unwrap()?;
    if use_mask_iou {
        if let Some(r) = preds.iter().chain(&gts).find(|r| r.detection.mask.is_none()) {
            return Err(CliError::invalid(format!(
                "eval-seg needs masks; a record for image `{}` has none",
                r.image_id
            )));
        }
    }
    let report: MetricsReport = evaluate(&group_by_image(&preds, &gts), &ec)?;
    out.write("report.txt", render_report(&report).as_bytes())?;
    if dump {
        out.write("dump.txt", render_dump(&report).as_bytes())?;
    }
    Ok(())
}
