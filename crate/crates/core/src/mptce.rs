//! Multi-periodic texture contrast enhancement.
//!
//! The periodic background of a map is modelled by its strongest Fourier
//! components. Their inverse transform is subtracted in the spatial domain
//! to give a disturbance map `D`, whose gradient magnitude drives a sigmoid
//! attention map `A`. The enhanced output is `F + alpha * A * F`.
//!
//! Spectra use the unnormalised forward transform
//! `F(u, v) = sum_{y, x} f(y, x) exp(-2 pi i (u x / W + v y / H))`
//! with zero-based indices; `u` is the horizontal frequency and `v` the
//! vertical one. The inverse carries the `1 / (H W)` factor.

use std::cmp::Ordering;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, sigmoid_map, ConvSpec, Tensor};

/// Number of dominant conjugate pairs kept when nothing else is configured.
pub const DEFAULT_TOP_K: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != height * width {
            return Err(Error::invalid(
                "spectrum",
                format!("{} coefficients for a {height}x{width} grid", coeffs.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            coeffs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major by `v`, then `u`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.coeffs[v * self.width + u]
    }

    /// Index of the conjugate partner of `(u, v)`.
    #[inline]
    pub fn partner(&self, u: usize, v: usize) -> (usize, usize) {
        ((self.width - u) % self.width, (self.height - v) % self.height)
    }

    /// Largest `|F(u, v) - conj(F(-u, -v))|` over the grid.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in 0..self.height {
            for u in 0..self.width {
                let (pu, pv) = self.partner(u, v);
                worst = worst.max((self.get(u, v) - self.get(pu, pv).conj()).norm());
            }
        }
        worst
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn require_single_channel(op: &'static str, x: &Tensor) -> Result<()> {
    if x.channels() != 1 {
        return Err(Error::invalid(op, format!("expects one channel, got {}", x.shape())));
    }
    if x.is_empty() {
        return Err(Error::invalid(op, "empty map"));
    }
    Ok(())
}

/// In-place 2-D transform: rows, then columns.
fn fft2_in_place(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Forward transform of a single-channel map.
pub fn dft2d(x: &Tensor) -> Result<Spectrum> {
    require_single_channel("dft2d", x)?;
    let (h, w) = (x.height(), x.width());
    let mut buf: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, h, w, false);
    Spectrum::new(h, w, buf)
}

/// Complex inverse transform including the `1 / (H W)` factor.
pub fn idft2d_complex(s: &Spectrum) -> Vec<Complex64> {
    let mut buf = s.coeffs.clone();
    fft2_in_place(&mut buf, s.height, s.width, true);
    let norm = 1.0 / (s.height * s.width) as f64;
    buf.iter_mut().for_each(|c| *c *= norm);
    buf
}

/// Real part of the inverse transform as a `[1, H, W]` map.
pub fn idft2d(s: &Spectrum) -> Result<Tensor> {
    let data = idft2d_complex(s).into_iter().map(|c| c.re).collect();
    Tensor::new(1, s.height, s.width, data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub u: usize,
    pub v: usize,
    pub coeff: Complex64,
}

/// Retained support of the periodic model, closed under conjugation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumPeaks {
    pub peaks: Vec<Peak>,
    pub include_dc: bool,
}

impl SpectrumPeaks {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.peaks.iter().any(|p| p.u == u && p.v == v)
    }

    /// Checks bounds, uniqueness and conjugate pairing against an
    /// `h x w` grid.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let mut seen = std::collections::HashMap::with_capacity(self.peaks.len());
        let mut scale: f64 = 0.0;
        for p in &self.peaks {
            if p.u >= w || p.v >= h {
                return Err(Error::invalid(
                    "periodic_reconstruct",
                    format!("peak ({}, {}) outside a {h}x{w} grid", p.u, p.v),
                ));
            }
            if seen.insert((p.u, p.v), p.coeff).is_some() {
                return Err(Error::invalid(
                    "periodic_reconstruct",
                    format!("duplicate peak ({}, {})", p.u, p.v),
                ));
            }
            scale = scale.max(p.coeff.norm());
        }
        for p in &self.peaks {
            let partner = ((w - p.u) % w, (h - p.v) % h);
            match seen.get(&partner) {
                Some(c) if (p.coeff - c.conj()).norm() <= 1e-9 * scale.max(1.0) => {}
                _ => return Err(Error::NotHermitian { u: p.u, v: p.v }),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Tiling {
    #[default]
    Whole,
    /// Square power-of-two tiles at 50% overlap, blended with a
    /// `sin^2` window.
    Square(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientKernel {
    #[default]
    Sobel,
    CentralDifference,
}

#[derive(Clone, Debug)]
pub struct MptceConfig {
    /// Dominant conjugate pairs kept besides DC.
    pub top_k: usize,
    pub include_dc: bool,
    pub tile: Tiling,
    pub alpha: f64,
    /// 3x3 conv from the boundary map to the attention logits.
    pub bca_conv: ConvSpec,
    pub gradient_kernel: GradientKernel,
}

impl Default for MptceConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            include_dc: true,
            tile: Tiling::Whole,
            alpha: 1.0,
            bca_conv: box_filter(0.0),
            gradient_kernel: GradientKernel::Sobel,
        }
    }
}

/// 3x3 averaging kernel with the given bias, padded to keep the map size.
pub fn box_filter(bias: f64) -> ConvSpec {
    let mut spec = ConvSpec::zeros(1, 1, 3, 3).with_padding(1).with_bias(vec![bias]);
    spec.weights.iter_mut().for_each(|w| *w = 1.0 / 9.0);
    spec
}

impl MptceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::invalid("mptce", "top_k must be at least 1"));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid(
                "mptce",
                format!("alpha must be finite and non-negative, got {}", self.alpha),
            ));
        }
        if let Tiling::Square(t) = self.tile {
            if t < 2 || !t.is_power_of_two() {
                return Err(Error::invalid(
                    "mptce",
                    format!("tile {t} must be a power of two >= 2"),
                ));
            }
        }
        self.bca_conv.validate()?;
        if self.bca_conv.in_channels != 1 || self.bca_conv.out_channels != 1 {
            return Err(Error::invalid(
                "boundary_attention",
                format!(
                    "attention conv must map 1 channel to 1, got {} -> {}",
                    self.bca_conv.in_channels, self.bca_conv.out_channels
                ),
            ));
        }
        Ok(())
    }
}

/// Number of conjugate classes among the non-DC bins of an `h x w` grid.
pub fn conjugate_classes(h: usize, w: usize) -> usize {
    // self-conjugate bins: u in {0, w/2}, v in {0, h/2} (when even)
    let su = if w.is_multiple_of(2) { 2 } else { 1 };
    let sv = if h.is_multiple_of(2) { 2 } else { 1 };
    let self_conj = su * sv - 1;
    let non_dc = h * w - 1;
    self_conj + (non_dc - self_conj) / 2
}

/// Keeps DC (optionally) and the `top_k` strongest conjugate pairs, with
/// ties resolved by the smaller `(u, v)` of each pair.
pub fn extract_periodic_peaks(s: &Spectrum, cfg: &MptceConfig) -> Result<SpectrumPeaks> {
    select_peaks(s, cfg.top_k, cfg.include_dc)
}

pub fn select_peaks(s: &Spectrum, top_k: usize, include_dc: bool) -> Result<SpectrumPeaks> {
    if top_k == 0 && !include_dc {
        return Err(Error::invalid(
            "extract_periodic_peaks",
            "top_k = 0 without DC leaves an empty model",
        ));
    }
    let available = conjugate_classes(s.height, s.width);
    if top_k > available {
        return Err(Error::invalid(
            "extract_periodic_peaks",
            format!(
                "top_k {top_k} exceeds the {available} conjugate pairs of a {}x{} grid",
                s.height, s.width
            ),
        ));
    }

    // One representative per class: the lexicographically smaller (u, v).
    let mut classes: Vec<(f64, usize, usize)> = Vec::with_capacity(available);
    for u in 0..s.width {
        for v in 0..s.height {
            if u == 0 && v == 0 {
                continue;
            }
            let (pu, pv) = s.partner(u, v);
            if (u, v) <= (pu, pv) {
                let mag = s.get(u, v).norm().max(s.get(pu, pv).norm());
                classes.push((mag, u, v));
            }
        }
    }
    classes.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });

    let mut peaks = Vec::with_capacity(2 * top_k + 1);
    if include_dc {
        peaks.push(Peak {
            u: 0,
            v: 0,
            coeff: s.get(0, 0),
        });
    }
    for &(_, u, v) in classes.iter().take(top_k) {
        peaks.push(Peak {
            u,
            v,
            coeff: s.get(u, v),
        });
        let (pu, pv) = s.partner(u, v);
        if (pu, pv) != (u, v) {
            peaks.push(Peak {
                u: pu,
                v: pv,
                coeff: s.get(pu, pv),
            });
        }
    }
    Ok(SpectrumPeaks { peaks, include_dc })
}

/// Inverse transform of the peak-only spectrum, evaluated directly.
pub fn periodic_reconstruct(peaks: &SpectrumPeaks, h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("periodic_reconstruct", "empty grid"));
    }
    peaks.validate(h, w)?;
    let unit = |n: usize, m: usize| {
        let theta = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
        Complex64::new(theta.cos(), theta.sin())
    };
    let roots_w: Vec<Complex64> = (0..w).map(|m| unit(w, m)).collect();
    let roots_h: Vec<Complex64> = (0..h).map(|m| unit(h, m)).collect();
    let norm = 1.0 / (h * w) as f64;

    let mut out = vec![0.0; h * w];
    let mut imag_energy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex64::default();
            for p in &peaks.peaks {
                let phase = roots_w[(p.u * x) % w] * roots_h[(p.v * y) % h];
                acc += p.coeff * phase;
            }
            out[y * w + x] = acc.re * norm;
            imag_energy += (acc.im * norm).powi(2);
        }
    }
    let real_energy: f64 = out.iter().map(|v| v * v).sum();
    if imag_energy.sqrt() > 1e-5 * real_energy.sqrt().max(1e-12) {
        return Err(Error::invalid(
            "periodic_reconstruct",
            "reconstruction has a non-negligible imaginary part",
        ));
    }
    Tensor::new(1, h, w, out)
}

fn residual_whole(f: &Tensor, cfg: &MptceConfig) -> Result<Vec<f64>> {
    let s = dft2d(f)?;
    let peaks = extract_periodic_peaks(&s, cfg)?;
    let periodic = periodic_reconstruct(&peaks, f.height(), f.width())?;
    Ok(f.data()
        .iter()
        .zip(periodic.data())
        .map(|(a, b)| (a - b).abs())
        .collect())
}

fn tile_starts(n: usize, tile: usize) -> Vec<usize> {
    let step = tile / 2;
    let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|s| s + tile <= n).collect();
    if starts.last().is_some_and(|&s| s + tile < n) {
        starts.push(n - tile);
    }
    starts
}

fn residual_tiled(f: &Tensor, tile: usize, cfg: &MptceConfig) -> Result<Vec<f64>> {
    let (h, w) = (f.height(), f.width());
    if tile > h || tile > w {
        return Err(Error::invalid(
            "disturbance_map",
            format!("tile {tile} larger than the {h}x{w} map"),
        ));
    }
    let window: Vec<f64> = (0..tile)
        .map(|n| (std::f64::consts::PI * (n as f64 + 0.5) / tile as f64).sin().powi(2))
        .collect();
    let mut num = vec![0.0; h * w];
    let mut den = vec![0.0; h * w];
    for &y0 in &tile_starts(h, tile) {
        for &x0 in &tile_starts(w, tile) {
            let patch = Tensor::from_fn(1, tile, tile, |_, y, x| f.at(0, y0 + y, x0 + x));
            let r = residual_whole(&patch, cfg)?;
            for y in 0..tile {
                for x in 0..tile {
                    let wgt = window[y] * window[x];
                    let i = (y0 + y) * w + x0 + x;
                    num[i] += wgt * r[y * tile + x];
                    den[i] += wgt;
                }
            }
        }
    }
    Ok(num.iter().zip(&den).map(|(n, d)| n / d).collect())
}

/// `|f - f_periodic|` in the spatial domain; zero wherever the map is
/// explained by its dominant frequencies.
pub fn disturbance_map(f: &Tensor, cfg: &MptceConfig) -> Result<Tensor> {
    require_single_channel("disturbance_map", f)?;
    let data = match cfg.tile {
        Tiling::Whole => residual_whole(f, cfg)?,
        Tiling::Square(t) => residual_tiled(f, t, cfg)?,
    };
    Tensor::new(1, f.height(), f.width(), data)
}

/// Gradient magnitude with replicated borders.
pub fn gradient_magnitude(d: &Tensor, kernel: GradientKernel) -> Result<Tensor> {
    require_single_channel("gradient_magnitude", d)?;
    let (h, w) = (d.height() as isize, d.width() as isize);
    let at = |y: isize, x: isize| d.at(0, y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize);
    Ok(Tensor::from_fn(1, d.height(), d.width(), |_, y, x| {
        let (y, x) = (y as isize, x as isize);
        let (gx, gy) = match kernel {
            GradientKernel::Sobel => (
                (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1)),
                (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1)),
            ),
            GradientKernel::CentralDifference => (
                0.5 * (at(y, x + 1) - at(y, x - 1)),
                0.5 * (at(y + 1, x) - at(y - 1, x)),
            ),
        };
        (gx * gx + gy * gy).sqrt()
    }))
}

/// `sigmoid(conv(|grad D|))`.
pub fn boundary_attention(d: &Tensor, cfg: &MptceConfig) -> Result<Tensor> {
    cfg.validate()?;
    let b = gradient_magnitude(d, cfg.gradient_kernel)?;
    let logits = conv2d(&b, &cfg.bca_conv)?;
    if logits.shape() != d.shape() {
        return Err(Error::ShapeMismatch {
            op: "boundary_attention",
            left: d.shape(),
            right: logits.shape(),
        });
    }
    Ok(sigmoid_map(&logits))
}

/// Intermediate maps of one enhancement pass.
#[derive(Clone, Debug)]
pub struct Enhancement {
    pub output: Tensor,
    /// Channel-mean disturbance map, `[1, H, W]`.
    pub disturbance: Tensor,
    pub attention: Tensor,
}

pub fn mptce_enhance(f: &Tensor, cfg: &MptceConfig) -> Result<Tensor> {
    Ok(mptce_enhance_traced(f, cfg)?.output)
}

pub fn mptce_enhance_traced(f: &Tensor, cfg: &MptceConfig) -> Result<Enhancement> {
    cfg.validate()?;
    if f.is_empty() {
        return Err(Error::invalid("mptce_enhance", "empty map"));
    }
    let per_channel: Vec<Tensor> = (0..f.channels())
        .into_par_iter()
        .map(|c| disturbance_map(&f.channel(c), cfg))
        .collect::<Result<_>>()?;
    let (h, w) = (f.height(), f.width());
    let mut mean = vec![0.0; h * w];
    for d in &per_channel {
        for (m, v) in mean.iter_mut().zip(d.data()) {
            *m += v;
        }
    }
    let inv = 1.0 / f.channels() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let disturbance = Tensor::new(1, h, w, mean)?;
    let attention = boundary_attention(&disturbance, cfg)?;

    let plane = h * w;
    let data = f
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + cfg.alpha * attention.data()[i % plane] * v)
        .collect();
    let output = Tensor::new(f.channels(), h, w, data)?;
    Ok(Enhancement {
        output,
        disturbance,
        attention,
    })
}
