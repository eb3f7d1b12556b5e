//! `gradcheck` and `count`.

use std::path::Path;

use wafertex_core::gradcheck::{
    grad_check_with, Conv2dOp, Differentiable, GlobalAvgPoolOp, GradCheckConfig, PointwiseOp, SigmoidOp,
};
use wafertex_core::muse::{MuseBlock, INIT_RANGE};
use wafertex_core::params::{count_params_flops, parse_layers, reference_layers};
use wafertex_core::report::{aligned, fixed6};
use wafertex_core::tensor::PointwiseKind;
use wafertex_core::{ConvSpec, Shape, Tensor};

use crate::config::Config;
use crate::error::CliError;
use crate::fsio::{read_text, OutDir};

pub fn run_gradcheck(mut cfg: Config, out: &OutDir) -> Result<(), CliError> {
    let op_name = cfg.string("op")?.unwrap_or_else(|| "muse".into());
    let seed = cfg.get_or("seed", 0u64)?;
    let channels = cfg.get_or("channels", 3usize)?;
    let height = cfg.get_or("height", 8usize)?;
    let width = cfg.get_or("width", 8usize)?;
    let eps = cfg.get_or("eps", 1e-6)?;
    let tolerance = cfg.get_or("tolerance", 1e-4)?;
    let max_samples = cfg.get_or("max_samples", 256usize)?;
    let out_channels = cfg.get_or("out_channels", 4usize)?;
    cfg.finish()?;

    let shape = Shape::new(channels, height, width);
    let x = Tensor::seeded_uniform(shape, seed, -1.0, 1.0);
    let op: Box<dyn Differentiable> = match op_name.as_str() {
        "conv" => Box::new(Conv2dOp(
            ConvSpec::seeded(channels, out_channels, 3, 1, seed ^ 1, INIT_RANGE).with_padding(1),
        )),
        "pointwise_mul" | "pointwise_add" => Box::new(PointwiseOp {
            other: Tensor::seeded_uniform(shape, seed ^ 2, -1.0, 1.0),
            kind: if op_name == "pointwise_mul" {
                PointwiseKind::Mul
            } else {
                PointwiseKind::Add
            },
        }),
        "sigmoid" => Box::new(SigmoidOp),
        "gap" => Box::new(GlobalAvgPoolOp),
        "muse" => Box::new(MuseBlock::seeded(channels, out_channels, None, seed ^ 3)?),
        other => return Err(CliError::invalid(format!("op: unknown operator `{other}`"))),
    };
    let err = grad_check_with(
        op.as_ref(),
        &x,
        eps,
        &GradCheckConfig {
            max_samples,
            seed: seed ^ 0x9e37_79b9,
        },
    )?;
    let pass = err <= tolerance;
    let text = aligned(&[
        ("op".into(), op_name),
        ("max_rel_error".into(), format!("{err:e}")),
        ("tolerance".into(), fixed6(tolerance)),
        ("pass".into(), pass.to_string()),
    ]);
    out.write("gradcheck.txt", text.as_bytes())?;
    if !pass {
        return Err(CliError::invalid(format!(
            "gradient check failed: {err:e} exceeds {tolerance:e}"
        )));
    }
    Ok(())
}

pub fn run_count(cfg: Config, layers: Option<&Path>, out: &OutDir) -> Result<(), CliError> {
    cfg.finish()?;
    let list = match layers {
        Some(p) => parse_layers(&read_text(p)?).map_err(|e| CliError::core_at(p, e))?,
        None => reference_layers(),
    };
    let mut text = String::from("# params flops layer\n");
    for l in &list {
        let c = l.cost()?;
        text.push_str(&format!("{} {} {l}\n", c.params, c.flops));
    }
    let total = count_params_flops(&list)?;
    text.push_str(&aligned(&[
        ("total.params".into(), total.params.to_string()),
        ("total.flops".into(), total.flops.to_string()),
    ]));
    out.write("count.txt", text.as_bytes())
}
