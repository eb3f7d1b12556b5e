//! `muse` and `fuse`: feature-map operators over flat tensor files.

use std::path::{Path, PathBuf};

use wafertex_core::fusion::{p2_fuse, tri_domain_fuse, tri_domain_fuse_projected, Combine, FuseMode, FusionConfig};
use wafertex_core::muse::{muse_forward, MuseBlock, INIT_RANGE};
use wafertex_core::tensorfile::{decode_muse, decode_tensor, encode_muse, encode_tensor, FlatTensor};
use wafertex_core::{ConvSpec, Tensor};

use crate::config::Config;
use crate::error::CliError;
use crate::fsio::{read_bytes, read_image, OutDir};

/// Reads a `.wtxt` tensor file or a grayscale image as a feature map.
pub fn read_feature_map(path: &Path) -> Result<Tensor, CliError> {
    if path.extension().is_some_and(|e| e == "wtxt") {
        let flat = decode_tensor(&read_bytes(path)?).map_err(|e| CliError::core_at(path, e))?;
        flat.to_tensor().map_err(|e| CliError::core_at(path, e))
    } else {
        read_image(path)
    }
}

fn write_map(out: &OutDir, name: &str, t: &Tensor) -> Result<(), CliError> {
    out.write(name, &encode_tensor(&FlatTensor::from_tensor(t)))
}

pub fn run_muse(mut cfg: Config, input: &Path, weights: Option<&Path>, out: &OutDir) -> Result<(), CliError> {
    let x = read_feature_map(input)?;
    let block = match weights {
        Some(path) => {
            let b = decode_muse(&read_bytes(path)?).map_err(|e| CliError::core_at(path, e))?;
            cfg.finish()?;
            b
        }
        None => {
            let out_channels = cfg.get_or("out_channels", 8usize)?;
            let se_groups = cfg.get("se_groups")?;
            let seed = cfg.get_or("seed", 0u64)?;
            let projection: Option<usize> = cfg.get("projection")?;
            cfg.finish()?;
            let mut b = MuseBlock::seeded(x.channels(), out_channels, se_groups, seed)?;
            if let Some(width) = projection {
                b = b.with_projection(width, seed.wrapping_add(3));
            }
            b
        }
    };
    let y = muse_forward(&x, &block)?;
    write_map(out, "output.wtxt", &y)?;
    out.write("weights.wtxb", &encode_muse(&block))?;
    Ok(())
}

pub fn run_fuse(mut cfg: Config, inputs: &[PathBuf], out: &OutDir) -> Result<(), CliError> {
    let mode = cfg.string("mode")?.unwrap_or_else(|| "p2".into());
    let maps = inputs
        .iter()
        .map(|p| read_feature_map(p))
        .collect::<Result<Vec<_>, _>>()?;
    let y = match mode.as_str() {
        "p2" => {
            let [c2, p3] = &maps[..] else {
                return Err(CliError::invalid("fuse mode=p2 takes two inputs: C2 then P3"));
            };
            let factor = cfg.get_or("upsample", 2usize)?;
            let seed = cfg.get_or("seed", 0u64)?;
            let combine = match cfg.string("combine")?.as_deref() {
                None | Some("add") => Combine::Add,
                Some("concat") => Combine::Concat,
                Some(c) => return Err(CliError::invalid(format!("combine: unknown mode `{c}`"))),
            };
            cfg.finish()?;
            let align = ConvSpec::seeded(c2.channels(), p3.channels(), 1, 1, seed, INIT_RANGE);
            let fc = FusionConfig {
                align_conv: align,
                upsample_factor: factor,
                combine,
            };
            p2_fuse(c2, p3, &fc)?
        }
        "tri" => {
            let [g, c, t] = &maps[..] else {
                return Err(CliError::invalid("fuse mode=tri takes three inputs: geometry, context, texture"));
            };
            let fuse = cfg.string("fuse")?.unwrap_or_else(|| "concat".into());
            let projection: Option<usize> = cfg.get("projection")?;
            let seed = cfg.get_or("seed", 0u64)?;
            cfg.finish()?;
            match (fuse.as_str(), projection) {
                ("sum", None) => tri_domain_fuse(g, c, t, FuseMode::Sum)?,
                ("concat", None) => tri_domain_fuse(g, c, t, FuseMode::Concat)?,
                ("concat", Some(width)) => {
                    let total = g.channels() + c.channels() + t.channels();
                    let proj = ConvSpec::seeded(total, width, 1, 1, seed, INIT_RANGE);
                    tri_domain_fuse_projected(g, c, t, &proj)?
                }
                ("sum", Some(_)) => return Err(CliError::invalid("projection needs fuse=concat")),
                (other, _) => return Err(CliError::invalid(format!("fuse: unknown mode `{other}`"))),
            }
        }
        other => return Err(CliError::invalid(format!("mode: unknown fusion `{other}`"))),
    };
    write_map(out, "output.wtxt", &y)
}
