//! Dense `[channels, height, width]` feature maps and the neural primitives
//! built on them.
//!
//! Every reduction walks its operands in row-major order, and any
//! parallelism splits work over output coordinates only, so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result, Shape};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from channel-major, then row-major data.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(channels, height, width);
        if data.len() != shape.len() {
            return Err(Error::invalid(
                "tensor",
                format!("{} values do not fill shape {shape}", data.len()),
            ));
        }
        let t = Self { shape, data };
        t.ensure_finite("tensor")?;
        Ok(t)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        let shape = Shape::new(channels, height, width);
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let shape = Shape::new(channels, height, width);
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    /// Values drawn uniformly from `[lo, hi)` with a seeded stream.
    pub fn seeded_uniform(shape: Shape, seed: u64, lo: f64, hi: f64) -> Self {
        let mut rng = Stream::new(seed);
        let data = (0..shape.len()).map(|_| rng.uniform_in(lo, hi)).collect();
        Self { shape, data }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.height * self.shape.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// A single channel as its own `[1, H, W]` tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        Tensor::from_parts(
            Shape::new(1, self.shape.height, self.shape.width),
            self.plane(c).to_vec(),
        )
    }

    /// Channels `start..start + count`.
    pub fn channel_range(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.shape.channels {
            return Err(Error::invalid(
                "channel_range",
                format!(
                    "channels {start}..{} out of range for {}",
                    start + count,
                    self.shape
                ),
            ));
        }
        let n = self.shape.height * self.shape.width;
        Ok(Tensor::from_parts(
            Shape::new(count, self.shape.height, self.shape.width),
            self.data[start * n..(start + count) * n].to_vec(),
        ))
    }

    /// Stacks tensors along the channel axis. All parts must share H and W.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "nothing to concatenate"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height() != h || p.width() != w {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape,
                    right: p.shape,
                });
            }
            channels += p.channels();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(Shape::new(channels, h, w), data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let plane = self.shape.height * self.shape.width;
                let (c, rem) = (i / plane, i % plane);
                Err(Error::NonFinite {
                    op,
                    coord: format!("({c}, {}, {})", rem / self.shape.width, rem % self.shape.width),
                })
            }
        }
    }
}

/// Convolution parameters and weights, laid out `[out, in / groups, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ConvSpec {
    /// Zero weights, no bias, stride 1, no padding, dilation 1, one group.
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: None,
        }
    }

    /// Weights and bias drawn uniformly from `[-range, range)`.
    pub fn seeded(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        groups: usize,
        seed: u64,
        range: f64,
    ) -> Self {
        let mut rng = Stream::new(seed);
        let n = out_channels * (in_channels / groups.max(1)) * kernel * kernel;
        let weights = (0..n).map(|_| rng.uniform_in(-range, range)).collect();
        let bias = (0..out_channels)
            .map(|_| rng.uniform_in(-range, range))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups,
            weights,
            bias: Some(bias),
        }
    }

    /// Channel-preserving kernel with a single 1 at the centre tap of each
    /// diagonal filter. `kernel` must be odd.
    pub fn identity(channels: usize, kernel: usize) -> Self {
        let mut spec = Self::zeros(channels, channels, kernel, kernel);
        let c = kernel / 2;
        for o in 0..channels {
            let i = spec.weight_index(o, o, c, c);
            spec.weights[i] = 1.0;
        }
        spec.padding = (kernel - 1) / 2;
        spec
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    /// Changes the group count, resizing the weight buffer (new weights are zero).
    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        let n = self.out_channels * (self.in_channels / groups.max(1)) * self.kernel_h * self.kernel_w;
        self.weights.resize(n, 0.0);
        self
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    #[inline]
    pub fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_per_group() + i) * self.kernel_h + ky) * self.kernel_w + kx
    }

    pub fn validate(&self) -> Result<()> {
        let op = "conv_spec";
        if self.groups == 0 || !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::invalid(
                op,
                format!(
                    "groups {} must divide in {} and out {}",
                    self.groups, self.in_channels, self.out_channels
                ),
            ));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(op, "stride and dilation must be at least 1"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::invalid(op, "kernel must be non-empty"));
        }
        let expected = self.out_channels * self.in_per_group() * self.kernel_h * self.kernel_w;
        if self.weights.len() != expected {
            return Err(Error::invalid(
                op,
                format!("{} weights, expected {expected}", self.weights.len()),
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::invalid(
                    op,
                    format!("{} bias values, expected {}", b.len(), self.out_channels),
                ));
            }
        }
        if self
            .weights
            .iter()
            .chain(self.bias.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid(op, "non-finite weight"));
        }
        Ok(())
    }

    /// `floor((n + 2p - d(k - 1) - 1) / s) + 1` per axis.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, k: usize| -> Result<usize> {
            let span = self.dilation * (k - 1) + 1;
            let padded = n + 2 * self.padding;
            if span > padded {
                return Err(Error::invalid(
                    "conv2d",
                    format!("kernel extent {span} exceeds padded input {padded}"),
                ));
            }
            Ok((padded - span) / self.stride + 1)
        };
        Ok((axis(height, self.kernel_h)?, axis(width, self.kernel_w)?))
    }
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    if x.channels() != spec.in_channels {
        return Err(Error::invalid(
            "conv2d",
            format!(
                "input has {} channels, spec expects {}",
                x.channels(),
                spec.in_channels
            ),
        ));
    }
    let (h, w) = (x.height(), x.width());
    let (ho, wo) = spec.output_size(h, w)?;
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p, d) = (spec.stride as isize, spec.padding as isize, spec.dilation as isize);

    let mut out = vec![0.0; spec.out_channels * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(o, plane)| {
        let g = o / opg;
        let b = spec.bias.as_ref().map_or(0.0, |b| b[o]);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b;
                for i in 0..ipg {
                    let src = x.plane(g * ipg + i);
                    for ky in 0..kh {
                        let iy = oy as isize * s + ky as isize * d - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let wrow = spec.weight_index(o, i, ky, 0);
                        for kx in 0..kw {
                            let ix = ox as isize * s + kx as isize * d - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += spec.weights[wrow + kx] * row[ix as usize];
                        }
                    }
                }
                plane[oy * wo + ox] = acc;
            }
        }
    });
    let t = Tensor::from_parts(Shape::new(spec.out_channels, ho, wo), out);
    t.ensure_finite("conv2d")?;
    Ok(t)
}

/// Gradient of `conv2d` with respect to its input, given the gradient of
/// the output.
pub fn conv2d_backward_input(
    input_shape: Shape,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<Tensor> {
    spec.validate()?;
    let (h, w) = (input_shape.height, input_shape.width);
    let (ho, wo) = spec.output_size(h, w)?;
    let expected = Shape::new(spec.out_channels, ho, wo);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: expected,
            right: grad_out.shape(),
        });
    }
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p, d) = (spec.stride as isize, spec.padding as isize, spec.dilation as isize);

    let mut grad = vec![0.0; spec.in_channels * h * w];
    grad.par_chunks_mut(h * w).enumerate().for_each(|(ci, plane)| {
        let (g, i) = (ci / ipg, ci % ipg);
        for o in g * opg..(g + 1) * opg {
            let go = grad_out.plane(o);
            for oy in 0..ho {
                for ox in 0..wo {
                    let upstream = go[oy * wo + ox];
                    for ky in 0..kh {
                        let iy = oy as isize * s + ky as isize * d - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox as isize * s + kx as isize * d - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            plane[iy as usize * w + ix as usize] +=
                                spec.weights[spec.weight_index(o, i, ky, kx)] * upstream;
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(input_shape, grad))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid("upsample_nearest", "factor must be at least 1"));
    }
    let (h, w) = (x.height(), x.width());
    Ok(Tensor::from_fn(x.channels(), h * factor, w * factor, |c, y, xx| {
        x.at(c, y / factor, xx / factor)
    }))
}

/// Per-channel mean, shape `[C, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    if x.height() == 0 || x.width() == 0 {
        return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
    }
    let n = (x.height() * x.width()) as f64;
    let data = (0..x.channels())
        .map(|c| x.plane(c).iter().sum::<f64>() / n)
        .collect();
    Ok(Tensor::from_parts(Shape::new(x.channels(), 1, 1), data))
}

pub fn global_avg_pool_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let expected = Shape::new(input_shape.channels, 1, 1);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool_backward",
            left: expected,
            right: grad_out.shape(),
        });
    }
    let n = (input_shape.height * input_shape.width) as f64;
    Ok(Tensor::from_fn(
        input_shape.channels,
        input_shape.height,
        input_shape.width,
        |c, _, _| grad_out.data[c] / n,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointwiseKind {
    Add,
    Mul,
}

fn broadcast_index(x: Shape, y: Shape) -> Option<bool> {
    if x == y {
        Some(false)
    } else if y.channels == x.channels && y.height == 1 && y.width == 1 {
        Some(true)
    } else {
        None
    }
}

/// Elementwise `x (+|*) y`. `y` may also be `[C, 1, 1]`, in which case each
/// channel value is broadcast over that channel's plane.
pub fn pointwise(x: &Tensor, y: &Tensor, kind: PointwiseKind) -> Result<Tensor> {
    let broadcast = broadcast_index(x.shape(), y.shape()).ok_or(Error::ShapeMismatch {
        op: "pointwise",
        left: x.shape(),
        right: y.shape(),
    })?;
    let plane = x.height() * x.width();
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let b = if broadcast { y.data[i / plane.max(1)] } else { y.data[i] };
            match kind {
                PointwiseKind::Add => a + b,
                PointwiseKind::Mul => a * b,
            }
        })
        .collect();
    let t = Tensor::from_parts(x.shape(), data);
    t.ensure_finite("pointwise")?;
    Ok(t)
}

/// Smallest value `sigmoid_map` emits.
pub const SIGMOID_FLOOR: f64 = 1e-30;

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.max(SIGMOID_FLOOR)
}

pub fn sigmoid_map(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}
