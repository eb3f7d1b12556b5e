//! `gen`: render a synthetic wafer scene.

use std::fmt::Write as _;

use wafertex_core::imageio::{encode_pfm, encode_pgm, render_preview};
use wafertex_core::records::{print_records, DetectionRecord};
use wafertex_core::synthgen::{
    gen_scene, suite_scene, AnomalyKind, AnomalyShape, AnomalySpec, GratingSpec, SceneSpec, Waveform,
};

use crate::config::Config;
use crate::error::CliError;
use crate::fsio::OutDir;

fn kind_from_name(s: &str) -> Result<AnomalyKind, CliError> {
    AnomalyKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| CliError::invalid(format!("unknown anomaly kind `{s}`")))
}

fn reals(key: &str, fields: &[&str]) -> Result<Vec<f64>, CliError> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| CliError::invalid(format!("{key}: `{f}` is not a number")))
        })
        .collect()
}

/// `sine|square period orientation amplitude phase`
fn parse_grating(value: &str) -> Result<GratingSpec, CliError> {
    let f: Vec<&str> = value.split_whitespace().collect();
    let waveform = match f.first() {
        Some(&"sine") => Waveform::Sine,
        Some(&"square") => Waveform::Square,
        _ => return Err(CliError::invalid(format!("grating `{value}`: expected sine or square first"))),
    };
    let [period, orientation, amplitude, phase] = reals("grating", &f[1..])?[..] else {
        return Err(CliError::invalid(format!("grating `{value}`: expected 4 numbers")));
    };
    Ok(GratingSpec {
        period,
        orientation,
        amplitude,
        phase,
        waveform,
    })
}

/// `disk x y contrast radius [class]`,
/// `scratch x y contrast length thickness angle [class]`,
/// `contamination x y contrast softness [class]`
fn parse_anomaly(value: &str) -> Result<AnomalySpec, CliError> {
    let f: Vec<&str> = value.split_whitespace().collect();
    let Some((&kind, rest)) = f.split_first() else {
        return Err(CliError::invalid("anomaly: empty value"));
    };
    let kind = kind_from_name(kind)?;
    let n_shape = match kind {
        AnomalyKind::Disk | AnomalyKind::Contamination => 1,
        AnomalyKind::Scratch => 3,
    };
    let n = 3 + n_shape;
    if rest.len() != n && rest.len() != n + 1 {
        return Err(CliError::invalid(format!(
            "anomaly `{value}`: {} takes {n} numbers and an optional class",
            kind.name()
        )));
    }
    let v = reals("anomaly", &rest[..n])?;
    let class_id = match rest.get(n) {
        Some(c) => Some(
            c.parse()
                .map_err(|_| CliError::invalid(format!("anomaly: bad class `{c}`")))?,
        ),
        None => None,
    };
    let shape = match kind {
        AnomalyKind::Disk => AnomalyShape::Disk { radius: v[3] },
        AnomalyKind::Scratch => AnomalyShape::Scratch {
            length: v[3],
            thickness: v[4],
            angle: v[5],
        },
        AnomalyKind::Contamination => AnomalyShape::Contamination { softness: v[3] },
    };
    Ok(AnomalySpec {
        shape,
        center: (v[0], v[1]),
        contrast: v[2],
        class_id,
    })
}

pub fn scene_from_config(cfg: &mut Config) -> Result<SceneSpec, CliError> {
    let seed = cfg.get_or("seed", 0u64)?;
    match cfg.string("preset")?.as_deref() {
        Some("suite") => {
            let kind = kind_from_name(&cfg.string("kind")?.unwrap_or_else(|| "disk".into()))?;
            let contrast = cfg.get_or("contrast", 0.5)?;
            let scene_keys = ["height", "width", "noise_sigma", "grating", "anomaly"];
            if let Some(k) = scene_keys.iter().find(|k| cfg.contains(k)) {
                return Err(CliError::invalid(format!("`{k}` cannot be combined with preset=suite")));
            }
            Ok(suite_scene(kind, contrast, seed))
        }
        Some(other) => Err(CliError::invalid(format!("unknown preset `{other}`"))),
        None => Ok(SceneSpec {
            height: cfg.get_or("height", 256)?,
            width: cfg.get_or("width", 256)?,
            gratings: cfg.all("grating").iter().map(|g| parse_grating(g)).collect::<Result<_, _>>()?,
            anomalies: cfg.all("anomaly").iter().map(|a| parse_anomaly(a)).collect::<Result<_, _>>()?,
            noise_sigma: cfg.get_or("noise_sigma", 0.0)?,
            seed,
        }),
    }
}

/// The resolved scene as config text that `gen` accepts back.
pub fn echo_scene(spec: &SceneSpec, image_id: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "image_id = {image_id}");
    let _ = writeln!(s, "height = {}", spec.height);
    let _ = writeln!(s, "width = {}", spec.width);
    let _ = writeln!(s, "seed = {}", spec.seed);
    let _ = writeln!(s, "noise_sigma = {}", spec.noise_sigma);
    for g in &spec.gratings {
        let wave = match g.waveform {
            Waveform::Sine => "sine",
            Waveform::Square => "square",
        };
        let _ = writeln!(
            s,
            "grating = {wave} {} {} {} {}",
            g.period, g.orientation, g.amplitude, g.phase
        );
    }
    for a in &spec.anomalies {
        let (x, y) = a.center;
        let _ = write!(s, "anomaly = {} {x} {y} {}", a.kind().name(), a.contrast);
        match a.shape {
            AnomalyShape::Disk { radius } => {
                let _ = write!(s, " {radius}");
            }
            AnomalyShape::Scratch {
                length,
                thickness,
                angle,
            } => {
                let _ = write!(s, " {length} {thickness} {angle}");
            }
            AnomalyShape::Contamination { softness } => {
                let _ = write!(s, " {softness}");
            }
        }
        if let Some(c) = a.class_id {
            let _ = write!(s, " {c}");
        }
        s.push('\n');
    }
    s
}

pub fn run(mut cfg: Config, out: &OutDir) -> Result<(), CliError> {
    let image_id = cfg.string("image_id")?.unwrap_or_else(|| "scene".into());
    let spec = scene_from_config(&mut cfg)?;
    cfg.finish()?;
    let scene = gen_scene(&spec)?;

    let (preview, _, _) = render_preview(&scene.image);
    let mask_img = scene.mask.to_tensor().map(|v| v * 255.0);
    let records: Vec<DetectionRecord> = scene
        .records
        .into_iter()
        .map(|d| DetectionRecord::new(image_id.clone(), d))
        .collect();

    out.write("image.pfm", &encode_pfm(&scene.image)?)?;
    out.write("image.pgm", &encode_pgm(&preview, 255)?)?;
    out.write("mask.pgm", &encode_pgm(&mask_img, 255)?)?;
    out.write("gt.txt", print_records(&records)?.as_bytes())?;
    out.write("scene.txt", echo_scene(&spec, &image_id).as_bytes())?;
    Ok(())
}
