//! Seeded periodic textures with injected defects and exact ground truth.
//!
//! Coordinates follow pixel centres: pixel `(x, y)` sits at integer
//! position `(x, y)`. Noise is drawn from [`crate::rng::Stream`].

use std::f64::consts::PI;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng::Stream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Waveform {
    #[default]
    Sine,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GratingSpec {
    /// Wavelength in pixels, at least 2.
    pub period: f64,
    /// Direction of the wave vector, radians from the x axis.
    pub orientation: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub waveform: Waveform,
}

impl GratingSpec {
    /// Sine grating whose frequency lands exactly on DFT bin `(u, v)` of an
    /// `h x w` grid, so it is periodic on that grid.
    pub fn on_bin(u: usize, v: usize, h: usize, w: usize, amplitude: f64, phase: f64) -> Self {
        let fx = u as f64 / w as f64;
        let fy = v as f64 / h as f64;
        Self {
            period: 1.0 / fx.hypot(fy),
            orientation: fy.atan2(fx),
            amplitude,
            phase,
            waveform: Waveform::Sine,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.period.is_finite() || self.period < 2.0 {
            return Err(Error::invalid(
                "gen_grating",
                format!("period {} is below the two-sample minimum", self.period),
            ));
        }
        if ![self.orientation, self.amplitude, self.phase].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("gen_grating", "non-finite parameter"));
        }
        Ok(())
    }
}

/// `amplitude * wave(2 pi (x cos t + y sin t) / period + phase)`.
pub fn gen_grating(spec: &GratingSpec, h: usize, w: usize) -> Result<Tensor> {
    spec.validate()?;
    let (c, s) = (spec.orientation.cos(), spec.orientation.sin());
    let k = 2.0 * PI / spec.period;
    Ok(Tensor::from_fn(1, h, w, |_, y, x| {
        let arg = k * (x as f64 * c + y as f64 * s) + spec.phase;
        let wave = match spec.waveform {
            Waveform::Sine => arg.sin(),
            Waveform::Square => {
                let v = arg.sin();
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        spec.amplitude * wave
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnomalyShape {
    /// Solid disk; pixels within `radius` of the centre.
    Disk { radius: f64 },
    /// Thick segment of `round(length)` by `round(thickness)` pixels,
    /// rotated by `angle`.
    Scratch {
        length: f64,
        thickness: f64,
        angle: f64,
    },
    /// Gaussian blob `contrast * exp(-r^2 / (2 softness^2))`; the mask is
    /// where the profile reaches 10% of its peak.
    Contamination { softness: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    Disk,
    Scratch,
    Contamination,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [Self::Disk, Self::Scratch, Self::Contamination];

    pub fn name(self) -> &'static str {
        match self {
            Self::Disk => "disk",
            Self::Scratch => "scratch",
            Self::Contamination => "contamination",
        }
    }

    /// Class id in [`crate::detection::CLASS_NAMES`]: particle, scratch,
    /// PO contamination.
    pub fn default_class(self) -> u32 {
        match self {
            Self::Disk => 2,
            Self::Scratch => 5,
            Self::Contamination => 4,
        }
    }
}

/// Mask threshold for soft anomalies, relative to the peak.
pub const SOFT_MASK_FRACTION: f64 = 0.1;
/// Soft profiles are truncated where they fall below this fraction.
pub const SOFT_CUTOFF_FRACTION: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalySpec {
    pub shape: AnomalyShape,
    /// `(x, y)` in pixels.
    pub center: (f64, f64),
    pub contrast: f64,
    /// Overrides the kind's default class.
    pub class_id: Option<u32>,
}

impl AnomalySpec {
    pub fn kind(&self) -> AnomalyKind {
        match self.shape {
            AnomalyShape::Disk { .. } => AnomalyKind::Disk,
            AnomalyShape::Scratch { .. } => AnomalyKind::Scratch,
            AnomalyShape::Contamination { .. } => AnomalyKind::Contamination,
        }
    }

    pub fn class(&self) -> u32 {
        self.class_id.unwrap_or_else(|| self.kind().default_class())
    }

    /// Extent of the masked region, `(x_min, y_min, x_max, y_max)`.
    fn support_extent(&self) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.center;
        let r = match self.shape {
            AnomalyShape::Disk { radius } => radius,
            AnomalyShape::Contamination { softness } => soft_radius(softness, SOFT_MASK_FRACTION),
            AnomalyShape::Scratch {
                length,
                thickness,
                angle,
            } => {
                let (hl, ht) = (length.round() / 2.0, thickness.round() / 2.0);
                let (c, s) = (angle.cos().abs(), angle.sin().abs());
                let (ex, ey) = (hl * c + ht * s, hl * s + ht * c);
                return (cx - ex, cy - ey, cx + ex, cy + ey);
            }
        };
        (cx - r, cy - r, cx + r, cy + r)
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        let op = "inject_anomaly";
        if self.contrast == 0.0 || !self.contrast.is_finite() {
            return Err(Error::invalid(op, "contrast must be non-zero and finite"));
        }
        let ok = match self.shape {
            AnomalyShape::Disk { radius } => radius > 0.0 && radius.is_finite(),
            AnomalyShape::Scratch {
                length,
                thickness,
                angle,
            } => length.round() >= 1.0 && thickness.round() >= 1.0 && angle.is_finite(),
            AnomalyShape::Contamination { softness } => softness > 0.0 && softness.is_finite(),
        };
        if !ok {
            return Err(Error::invalid(op, format!("invalid size in {:?}", self.shape)));
        }
        let (x0, y0, x1, y1) = self.support_extent();
        if x0 < -0.5 || y0 < -0.5 || x1 > w as f64 - 0.5 || y1 > h as f64 - 0.5 {
            return Err(Error::invalid(
                op,
                format!(
                    "support [{x0:.2}, {x1:.2}] x [{y0:.2}, {y1:.2}] leaves the {h}x{w} image"
                ),
            ));
        }
        Ok(())
    }
}

fn soft_radius(softness: f64, fraction: f64) -> f64 {
    softness * (-2.0 * fraction.ln()).sqrt()
}

/// Adds one anomaly to a single-channel image and returns the new image
/// with the anomaly's mask.
pub fn inject_anomaly(img: &Tensor, spec: &AnomalySpec) -> Result<(Tensor, Mask)> {
    if img.channels() != 1 {
        return Err(Error::invalid(
            "inject_anomaly",
            format!("expects one channel, got {}", img.shape()),
        ));
    }
    let (h, w) = (img.height(), img.width());
    spec.validate(h, w)?;
    let (cx, cy) = spec.center;
    let mut out = img.clone();
    let mut mask = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let delta = match spec.shape {
                AnomalyShape::Disk { radius } => {
                    if dx * dx + dy * dy <= radius * radius {
                        mask.set(y, x, true);
                        spec.contrast
                    } else {
                        0.0
                    }
                }
                AnomalyShape::Scratch {
                    length,
                    thickness,
                    angle,
                } => {
                    let (c, s) = (angle.cos(), angle.sin());
                    let along = dx * c + dy * s;
                    let across = -dx * s + dy * c;
                    let (hl, ht) = (length.round() / 2.0, thickness.round() / 2.0);
                    if (-hl..hl).contains(&along) && (-ht..ht).contains(&across) {
                        mask.set(y, x, true);
                        spec.contrast
                    } else {
                        0.0
                    }
                }
                AnomalyShape::Contamination { softness } => {
                    let g = (-(dx * dx + dy * dy) / (2.0 * softness * softness)).exp();
                    if g >= SOFT_MASK_FRACTION {
                        mask.set(y, x, true);
                    }
                    if g >= SOFT_CUTOFF_FRACTION {
                        spec.contrast * g
                    } else {
                        0.0
                    }
                }
            };
            if delta != 0.0 {
                out.set(0, y, x, out.at(0, y, x) + delta);
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::invalid("inject_anomaly", "anomaly covers no pixel centre"));
    }
    Ok((out, mask))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub gratings: Vec<GratingSpec>,
    pub anomalies: Vec<AnomalySpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    /// Union of all anomaly masks.
    pub mask: Mask,
    /// One ground-truth instance per anomaly, in spec order.
    pub records: Vec<Detection>,
}

/// Gratings, then anomalies in order, then Gaussian noise.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::invalid("gen_scene", "empty image"));
    }
    if !spec.noise_sigma.is_finite() || spec.noise_sigma < 0.0 {
        return Err(Error::invalid("gen_scene", "noise sigma must be finite and >= 0"));
    }
    let (h, w) = (spec.height, spec.width);
    let mut image = Tensor::zeros(1, h, w);
    for g in &spec.gratings {
        let layer = gen_grating(g, h, w)?;
        for (a, b) in image.data_mut().iter_mut().zip(layer.data()) {
            *a += b;
        }
    }
    let mut mask = Mask::empty(h, w);
    let mut records = Vec::with_capacity(spec.anomalies.len());
    for a in &spec.anomalies {
        let (next, m) = inject_anomaly(&image, a)?;
        image = next;
        records.push(Detection::from_mask(a.class(), 1.0, &m)?);
        mask.union_with(&m)?;
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = Stream::new(spec.seed);
        for v in image.data_mut() {
            *v += spec.noise_sigma * rng.normal();
        }
    }
    Ok(Scene {
        image,
        mask,
        records,
    })
}

/// Anomaly contrast relative to the primary grating amplitude in the
/// standard suite.
pub const SUITE_CONTRASTS: [f64; 3] = [0.1, 0.25, 0.5];
pub const SUITE_SEEDS: u64 = 5;
pub const SUITE_SIZE: usize = 256;
pub const SUITE_NOISE: f64 = 0.005;

/// One low-contrast scene: two on-grid sine gratings (amplitudes 1 and
/// 0.5) plus a single anomaly of the given kind, all drawn from `seed`.
pub fn suite_scene(kind: AnomalyKind, contrast: f64, seed: u64) -> SceneSpec {
    let n = SUITE_SIZE;
    let mut rng = Stream::new(seed ^ 0x5eed_0000);
    let primary = GratingSpec::on_bin(
        rng.int_in(8, 32) as usize,
        rng.int_in(0, 8) as usize,
        n,
        n,
        1.0,
        rng.uniform_in(0.0, 2.0 * PI),
    );
    let secondary = GratingSpec::on_bin(
        rng.int_in(0, 8) as usize,
        rng.int_in(12, 40) as usize,
        n,
        n,
        0.5,
        rng.uniform_in(0.0, 2.0 * PI),
    );
    let shape = match kind {
        AnomalyKind::Disk => AnomalyShape::Disk {
            radius: rng.uniform_in(6.0, 12.0),
        },
        AnomalyKind::Scratch => AnomalyShape::Scratch {
            length: rng.uniform_in(40.0, 90.0),
            thickness: rng.uniform_in(1.5, 3.5),
            angle: rng.uniform_in(0.0, PI),
        },
        AnomalyKind::Contamination => AnomalyShape::Contamination {
            softness: rng.uniform_in(4.0, 8.0),
        },
    };
    let margin = 56.0;
    let center = (
        rng.uniform_in(margin, n as f64 - margin),
        rng.uniform_in(margin, n as f64 - margin),
    );
    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    SceneSpec {
        height: n,
        width: n,
        gratings: vec![primary, secondary],
        anomalies: vec![AnomalySpec {
            shape,
            center,
            contrast: sign * contrast,
            class_id: None,
        }],
        noise_sigma: SUITE_NOISE,
        seed,
    }
}

/// The 3 contrasts x 3 kinds x 5 seeds benchmark, in that nesting order.
pub fn standard_suite() -> Vec<(AnomalyKind, f64, SceneSpec)> {
    let mut out = Vec::new();
    for &contrast in &SUITE_CONTRASTS {
        for kind in AnomalyKind::ALL {
            for seed in 0..SUITE_SEEDS {
                out.push((kind, contrast, suite_scene(kind, contrast, seed)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(period: f64, orientation: f64) -> GratingSpec {
        GratingSpec {
            period,
            orientation,
            amplitude: 2.0,
            phase: 0.0,
            waveform: Waveform::Sine,
        }
    }

    #[test]
    fn grating_values() {
        let g = gen_grating(&sine(8.0, 0.0), 4, 16).unwrap();
        for y in 0..4 {
            assert_eq!(g.at(0, y, 0), 0.0);
            assert!((g.at(0, y, 2) - 2.0).abs() < 1e-12);
            assert_eq!(g.at(0, y, 5), g.at(0, 0, 5));
        }
        let null = GratingSpec { amplitude: 0.0, ..sine(8.0, 0.3) };
        assert!(gen_grating(&null, 5, 5).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(gen_grating(&sine(1.5, 0.0), 4, 4).is_err());
        let sq = GratingSpec { waveform: Waveform::Square, ..sine(8.0, 0.0) };
        let s = gen_grating(&sq, 1, 8).unwrap();
        assert_eq!(s.at(0, 0, 0), 0.0);
        for x in 1..4 {
            assert_eq!(s.at(0, 0, x), 2.0);
            assert_eq!(s.at(0, 0, x + 4), -2.0);
        }
    }

    #[test]
    fn disk_minimal_support() {
        let img = Tensor::zeros(1, 9, 9);
        let spec = AnomalySpec {
            shape: AnomalyShape::Disk { radius: 0.5 },
            center: (4.0, 4.0),
            contrast: 0.3,
            class_id: None,
        };
        let (out, mask) = inject_anomaly(&img, &spec).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get(4, 4));
        assert_eq!(out.at(0, 4, 4), 0.3);
        assert_eq!(out.sum(), 0.3);
    }

    #[test]
    fn contrast_sign_flip() {
        let img = Tensor::seeded_uniform(crate::Shape::new(1, 32, 32), 1, -1.0, 1.0);
        for shape in [
            AnomalyShape::Disk { radius: 4.0 },
            AnomalyShape::Scratch { length: 12.0, thickness: 2.0, angle: 0.7 },
            AnomalyShape::Contamination { softness: 3.0 },
        ] {
            let mut spec = AnomalySpec { shape, center: (15.0, 16.0), contrast: 0.4, class_id: None };
            let (a, ma) = inject_anomaly(&img, &spec).unwrap();
            spec.contrast = -0.4;
            let (b, mb) = inject_anomaly(&img, &spec).unwrap();
            assert_eq!(ma, mb);
            for i in 0..img.len() {
                let (da, db) = (a.data()[i] - img.data()[i], b.data()[i] - img.data()[i]);
                assert!((da + db).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn anomaly_errors() {
        let img = Tensor::zeros(1, 20, 20);
        let mut spec = AnomalySpec {
            shape: AnomalyShape::Disk { radius: 5.0 },
            center: (3.0, 10.0),
            contrast: 1.0,
            class_id: None,
        };
        assert!(inject_anomaly(&img, &spec).is_err());
        spec.center = (10.0, 10.0);
        spec.contrast = 0.0;
        assert!(inject_anomaly(&img, &spec).is_err());
        spec.contrast = 1.0;
        spec.shape = AnomalyShape::Contamination { softness: 5.0 };
        // 10% radius is about 10.7 px
        assert!(inject_anomaly(&img, &spec).is_err());
        assert!(inject_anomaly(&Tensor::zeros(2, 20, 20), &spec).is_err());
    }

    #[test]
    fn contamination_mask_is_threshold() {
        let img = Tensor::zeros(1, 40, 40);
        let spec = AnomalySpec {
            shape: AnomalyShape::Contamination { softness: 3.0 },
            center: (20.0, 19.5),
            contrast: -0.8,
            class_id: Some(0),
        };
        let (out, mask) = inject_anomaly(&img, &spec).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let v = out.at(0, y, x).abs();
                assert_eq!(mask.get(y, x), v >= 0.8 * SOFT_MASK_FRACTION, "({x}, {y}) {v}");
            }
        }
        assert_eq!(spec.class(), 0);
    }

    #[test]
    fn clean_scene() {
        let spec = SceneSpec {
            height: 16,
            width: 16,
            gratings: vec![GratingSpec::on_bin(2, 1, 16, 16, 1.0, 0.0)],
            anomalies: vec![],
            noise_sigma: 0.0,
            seed: 0,
        };
        let scene = gen_scene(&spec).unwrap();
        assert!(scene.mask.is_empty());
        assert!(scene.records.is_empty());
    }

    #[test]
    fn suite_is_valid() {
        let suite = standard_suite();
        assert_eq!(suite.len(), 45);
        for (_, _, spec) in suite.iter().take(15) {
            let scene = gen_scene(spec).unwrap();
            assert_eq!(scene.records.len(), 1);
        }
    }
}
