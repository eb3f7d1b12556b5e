//! `enhance`: periodic-texture contrast enhancement of one image.

use std::path::Path;

use wafertex_core::detection::Detection;
use wafertex_core::imageio::{encode_pfm, encode_pgm, render_preview};
use wafertex_core::mask::Mask;
use wafertex_core::mptce::{box_filter, mptce_enhance_traced, GradientKernel, MptceConfig, Tiling};
use wafertex_core::records::{print_records, DetectionRecord};
use wafertex_core::report::{aligned, fixed6};
use wafertex_core::Tensor;

use crate::config::Config;
use crate::error::CliError;
use crate::fsio::{read_image, OutDir};

pub fn mptce_from_config(cfg: &mut Config) -> Result<MptceConfig, CliError> {
    let d = MptceConfig::default();
    let tile = match cfg.string("tile")?.as_deref() {
        None | Some("whole") => Tiling::Whole,
        Some(n) => Tiling::Square(
            n.parse()
                .map_err(|_| CliError::invalid(format!("tile: expected `whole` or a size, got `{n}`")))?,
        ),
    };
    let gradient_kernel = match cfg.string("gradient")?.as_deref() {
        None | Some("sobel") => GradientKernel::Sobel,
        Some("central") => GradientKernel::CentralDifference,
        Some(g) => return Err(CliError::invalid(format!("gradient: unknown kernel `{g}`"))),
    };
    let m = MptceConfig {
        top_k: cfg.get_or("top_k", d.top_k)?,
        include_dc: cfg.flag("include_dc", d.include_dc)?,
        tile,
        alpha: cfg.get_or("alpha", d.alpha)?,
        bca_conv: box_filter(cfg.get_or("bca_bias", 0.0)?),
        gradient_kernel,
    };
    m.validate()?;
    Ok(m)
}

/// Thresholds `d` at `fraction` of its maximum and turns each 4-connected
/// component of at least `min_area` pixels into a detection scored by its
/// peak relative to the global peak.
pub fn detect(d: &Tensor, fraction: f64, min_area: usize, class_id: u32) -> Result<Vec<Detection>, CliError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::invalid("detect_threshold must lie in (0, 1]"));
    }
    let peak = d.max_abs();
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    let cut = fraction * peak;
    let fg = Mask::from_fn(d.height(), d.width(), |y, x| d.at(0, y, x) >= cut);
    let mut dets = Vec::new();
    for comp in fg.components() {
        if comp.count() < min_area {
            continue;
        }
        let mut top = 0.0f64;
        for y in 0..d.height() {
            for x in 0..d.width() {
                if comp.get(y, x) {
                    top = top.max(d.at(0, y, x));
                }
            }
        }
        dets.push(Detection::from_mask(class_id, (top / peak).min(1.0), &comp)?);
    }
    Ok(dets)
}

pub fn run(mut cfg: Config, input: &Path, out: &OutDir) -> Result<(), CliError> {
    let m = mptce_from_config(&mut cfg)?;
    let maps = cfg.flag("maps", true)?;
    let threshold: Option<f64> = cfg.get("detect_threshold")?;
    let min_area = cfg.get_or("min_area", 4usize)?;
    let class_id = cfg.get_or("class_id", 2u32)?;
    let image_id = cfg.string("image_id")?.unwrap_or_else(|| "scene".into());
    cfg.finish()?;

    let f = read_image(input)?;
    let e = mptce_enhance_traced(&f, &m)?;
    out.write("enhanced.pfm", &encode_pfm(&e.output)?)?;

    if maps {
        let mut sidecar = Vec::new();
        for (name, map) in [("disturbance", &e.disturbance), ("attention", &e.attention)] {
            let (preview, lo, hi) = render_preview(map);
            out.write(&format!("{name}.pfm"), &encode_pfm(map)?)?;
            out.write(&format!("{name}.pgm"), &encode_pgm(&preview, 255)?)?;
            sidecar.push((format!("{name}.min"), fixed6(lo)));
            sidecar.push((format!("{name}.max"), fixed6(hi)));
        }
        out.write("preview.txt", aligned(&sidecar).as_bytes())?;
    }

    if let Some(fraction) = threshold {
        let records: Vec<DetectionRecord> = detect(&e.disturbance, fraction, min_area, class_id)?
            .into_iter()
            .map(|d| DetectionRecord::new(image_id.clone(), d))
            .collect();
        out.write("detections.txt", print_records(&records)?.as_bytes())?;
    }
    Ok(())
}
