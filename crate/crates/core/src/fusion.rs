//! High-resolution branch fusion, the sampling feasibility check, and the
//! three-way domain fusion.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, pointwise, upsample_nearest, ConvSpec, PointwiseKind, Tensor};

/// Pyramid strides the feasibility check accepts.
pub const PYRAMID_STRIDES: [u32; 5] = [2, 4, 8, 16, 32];

/// Minimum number of feature-map samples across a defect.
pub const MIN_SAMPLES: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NyquistReport {
    pub feasible: bool,
    /// `defect_width / stride`, the width in feature-map cells.
    pub ratio: f64,
    /// Coarsest pyramid stride that still resolves the defect.
    pub largest_feasible_stride: Option<u32>,
}

/// Whether a defect `defect_width` pixels wide keeps at least two samples
/// after downsampling by `stride`.
pub fn nyquist_min_scale(defect_width: f64, stride: u32) -> Result<NyquistReport> {
    if !(defect_width > 0.0 && defect_width.is_finite()) {
        return Err(Error::invalid(
            "nyquist_min_scale",
            format!("defect width must be positive, got {defect_width}"),
        ));
    }
    if !PYRAMID_STRIDES.contains(&stride) {
        return Err(Error::invalid(
            "nyquist_min_scale",
            format!("stride {stride} is not one of {PYRAMID_STRIDES:?}"),
        ));
    }
    let ratio = defect_width / stride as f64;
    let largest_feasible_stride = PYRAMID_STRIDES
        .iter()
        .rev()
        .copied()
        .find(|&s| defect_width / s as f64 >= MIN_SAMPLES);
    Ok(NyquistReport {
        feasible: ratio >= MIN_SAMPLES,
        ratio,
        largest_feasible_stride,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Combine {
    #[default]
    Add,
    Concat,
}

#[derive(Clone, Debug)]
pub struct FusionConfig {
    /// 1x1 channel alignment applied to the stage-2 map.
    pub align_conv: ConvSpec,
    pub upsample_factor: usize,
    pub combine: Combine,
}

impl FusionConfig {
    pub fn new(align_conv: ConvSpec, upsample_factor: usize) -> Self {
        Self {
            align_conv,
            upsample_factor,
            combine: Combine::Add,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.align_conv.kernel_h != 1 || self.align_conv.kernel_w != 1 {
            return Err(Error::invalid(
                "p2_fuse",
                format!(
                    "alignment conv must be 1x1, got {}x{}",
                    self.align_conv.kernel_h, self.align_conv.kernel_w
                ),
            ));
        }
        if self.upsample_factor == 0 {
            return Err(Error::invalid("p2_fuse", "upsample factor must be at least 1"));
        }
        self.align_conv.validate()
    }
}

/// Aligns `c2` with a 1x1 conv, upsamples it onto the P3 grid and merges
/// it with `p3`.
pub fn p2_fuse(c2: &Tensor, p3: &Tensor, cfg: &FusionConfig) -> Result<Tensor> {
    cfg.validate()?;
    let aligned = conv2d(c2, &cfg.align_conv)?;
    let up = upsample_nearest(&aligned, cfg.upsample_factor)?;
    let spatial_ok = up.height() == p3.height() && up.width() == p3.width();
    let fits = match cfg.combine {
        Combine::Add => spatial_ok && up.channels() == p3.channels(),
        Combine::Concat => spatial_ok,
    };
    if !fits {
        return Err(Error::ShapeMismatch {
            op: "p2_fuse",
            left: up.shape(),
            right: p3.shape(),
        });
    }
    match cfg.combine {
        Combine::Add => pointwise(&up, p3, PointwiseKind::Add),
        Combine::Concat => Tensor::concat_channels(&[&up, p3]),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FuseMode {
    Sum,
    #[default]
    Concat,
}

/// Merges geometric, contextual and texture features into one map.
///
/// `Sum` adds the three values at each position in ascending order, so
/// the result does not depend on argument order. `Concat` stacks channels.
pub fn tri_domain_fuse(
    f_geom: &Tensor,
    f_context: &Tensor,
    f_texture: &Tensor,
    mode: FuseMode,
) -> Result<Tensor> {
    let parts = [f_geom, f_context, f_texture];
    for p in &parts[1..] {
        let mismatch = match mode {
            FuseMode::Sum => p.shape() != f_geom.shape(),
            FuseMode::Concat => p.height() != f_geom.height() || p.width() != f_geom.width(),
        };
        if mismatch {
            return Err(Error::ShapeMismatch {
                op: "tri_domain_fuse",
                left: f_geom.shape(),
                right: p.shape(),
            });
        }
    }
    match mode {
        FuseMode::Concat => Tensor::concat_channels(&parts),
        FuseMode::Sum => {
            let data = (0..f_geom.len())
                .map(|i| {
                    let mut v = [f_geom.data()[i], f_context.data()[i], f_texture.data()[i]];
                    v.sort_by(f64::total_cmp);
                    v[0] + v[1] + v[2]
                })
                .collect();
            Tensor::new(f_geom.channels(), f_geom.height(), f_geom.width(), data)
        }
    }
}

/// Concatenation followed by a 1x1 projection back to `projection.out_channels`.
pub fn tri_domain_fuse_projected(
    f_geom: &Tensor,
    f_context: &Tensor,
    f_texture: &Tensor,
    projection: &ConvSpec,
) -> Result<Tensor> {
    if projection.kernel_h != 1 || projection.kernel_w != 1 {
        return Err(Error::invalid("tri_domain_fuse", "projection must be 1x1"));
    }
    let stacked = tri_domain_fuse(f_geom, f_context, f_texture, FuseMode::Concat)?;
    conv2d(&stacked, projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;

    #[test]
    fn nyquist_examples() {
        let r = nyquist_min_scale(7.0, 8).unwrap();
        assert!(!r.feasible);
        assert!(r.ratio < 1.0);
        assert_eq!(r.largest_feasible_stride, Some(2));
        assert!(nyquist_min_scale(16.0, 8).unwrap().feasible);
        assert!(nyquist_min_scale(8.0, 4).unwrap().feasible);
        assert!(!nyquist_min_scale(8.0, 8).unwrap().feasible);
        assert_eq!(nyquist_min_scale(3.0, 2).unwrap().largest_feasible_stride, None);
    }

    #[test]
    fn nyquist_errors() {
        assert!(nyquist_min_scale(0.0, 8).is_err());
        assert!(nyquist_min_scale(-1.0, 8).is_err());
        assert!(nyquist_min_scale(4.0, 3).is_err());
    }

    fn identity_align(c: usize) -> ConvSpec {
        ConvSpec::identity(c, 1)
    }

    #[test]
    fn zero_alignment_returns_p3() {
        let c2 = Tensor::seeded_uniform(Shape::new(3, 4, 4), 1, -1.0, 1.0);
        let p3 = Tensor::seeded_uniform(Shape::new(2, 8, 8), 2, -1.0, 1.0);
        let cfg = FusionConfig::new(ConvSpec::zeros(3, 2, 1, 1), 2);
        assert_eq!(p2_fuse(&c2, &p3, &cfg).unwrap(), p3);
    }

    #[test]
    fn identity_alignment_onto_zeros() {
        let c2 = Tensor::seeded_uniform(Shape::new(3, 5, 5), 3, -1.0, 1.0);
        let p3 = Tensor::zeros(3, 5, 5);
        let cfg = FusionConfig::new(identity_align(3), 1);
        assert_eq!(p2_fuse(&c2, &p3, &cfg).unwrap(), c2);
    }

    #[test]
    fn concat_variant_and_errors() {
        let c2 = Tensor::zeros(2, 4, 4);
        let p3 = Tensor::zeros(5, 8, 8);
        let mut cfg = FusionConfig::new(ConvSpec::zeros(2, 3, 1, 1), 2);
        cfg.combine = Combine::Concat;
        assert_eq!(p2_fuse(&c2, &p3, &cfg).unwrap().shape(), Shape::new(8, 8, 8));
        cfg.combine = Combine::Add;
        let err = p2_fuse(&c2, &p3, &cfg).unwrap_err().to_string();
        assert!(err.contains("[3, 8, 8]") && err.contains("[5, 8, 8]"), "{err}");
        cfg.upsample_factor = 3;
        assert!(p2_fuse(&c2, &Tensor::zeros(3, 8, 8), &cfg).is_err());
        let bad = FusionConfig::new(ConvSpec::zeros(2, 3, 3, 3), 2);
        assert!(p2_fuse(&c2, &Tensor::zeros(3, 8, 8), &bad).is_err());
    }

    #[test]
    fn tri_fusion_laws() {
        let a = Tensor::seeded_uniform(Shape::new(2, 3, 3), 1, -1.0, 1.0);
        let z = Tensor::zeros(2, 3, 3);
        assert_eq!(tri_domain_fuse(&z, &a, &z, FuseMode::Sum).unwrap(), a);
        let b = Tensor::zeros(1, 3, 3);
        let c = Tensor::zeros(4, 3, 3);
        let cat = tri_domain_fuse(&a, &b, &c, FuseMode::Concat).unwrap();
        assert_eq!(cat.shape(), Shape::new(7, 3, 3));
        assert!(tri_domain_fuse(&a, &b, &c, FuseMode::Sum).is_err());
        assert!(tri_domain_fuse(&a, &Tensor::zeros(2, 3, 4), &a, FuseMode::Concat).is_err());
    }

    #[test]
    fn projected_fusion_shape() {
        let a = Tensor::seeded_uniform(Shape::new(2, 3, 3), 1, -1.0, 1.0);
        let proj = ConvSpec::seeded(6, 2, 1, 1, 5, 0.1);
        let out = tri_domain_fuse_projected(&a, &a, &a, &proj).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 3, 3));
    }
}
