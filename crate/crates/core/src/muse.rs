//! Context block: a local 3x3 branch and a dilated 3x3 branch are
//! concatenated, then reweighted per channel by an EffectiveSE gate
//! (global average pool, grouped 1x1 conv, sigmoid).

use crate::error::{Error, Result};
use crate::gradcheck::Differentiable;
use crate::tensor::{
    conv2d, conv2d_backward_input, global_avg_pool, global_avg_pool_backward, pointwise,
    sigmoid_map, ConvSpec, PointwiseKind, Tensor,
};

/// Dilation of the surrounding branch.
pub const SURROUND_DILATION: usize = 2;

/// Half-width of the uniform range used for seeded weights.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MuseBlock {
    pub local: ConvSpec,
    pub surround: ConvSpec,
    pub se_conv: ConvSpec,
    /// Optional 1x1 conv mapping the concatenated width back to some
    /// other width. Off unless set explicitly.
    pub projection: Option<ConvSpec>,
}

impl MuseBlock {
    /// Seeded block with `out_channels / 2` channels per branch and a
    /// depthwise (`groups = out_channels`) gate unless `se_groups` says
    /// otherwise.
    pub fn seeded(
        in_channels: usize,
        out_channels: usize,
        se_groups: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if out_channels == 0 || !out_channels.is_multiple_of(2) {
            return Err(Error::invalid(
                "muse",
                format!("output width {out_channels} must be even and positive"),
            ));
        }
        let half = out_channels / 2;
        let groups = se_groups.unwrap_or(out_channels);
        let block = Self {
            local: ConvSpec::seeded(in_channels, half, 3, 1, seed, INIT_RANGE).with_padding(1),
            surround: ConvSpec::seeded(in_channels, half, 3, 1, seed.wrapping_add(1), INIT_RANGE)
                .with_padding(SURROUND_DILATION)
                .with_dilation(SURROUND_DILATION),
            se_conv: ConvSpec::seeded(
                out_channels,
                out_channels,
                1,
                groups,
                seed.wrapping_add(2),
                INIT_RANGE,
            ),
            projection: None,
        };
        block.validate()?;
        Ok(block)
    }

    /// Adds a seeded 1x1 projection from the concatenated width to `width`.
    pub fn with_projection(mut self, width: usize, seed: u64) -> Self {
        self.projection = Some(ConvSpec::seeded(
            self.context_channels(),
            width,
            1,
            1,
            seed,
            INIT_RANGE,
        ));
        self
    }

    pub fn in_channels(&self) -> usize {
        self.local.in_channels
    }

    /// Width of the concatenated context map.
    pub fn context_channels(&self) -> usize {
        self.local.out_channels + self.surround.out_channels
    }

    pub fn out_channels(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.context_channels(), |p| p.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        self.local.validate().map_err(|e| e.in_branch("local"))?;
        self.surround.validate().map_err(|e| e.in_branch("surround"))?;
        self.se_conv.validate().map_err(|e| e.in_branch("effective_se"))?;
        let bad = |msg: String| Err(Error::invalid("muse", msg));
        for (name, c, dil) in [("local", &self.local, 1), ("surround", &self.surround, SURROUND_DILATION)] {
            if c.kernel_h != 3 || c.kernel_w != 3 || c.stride != 1 || c.dilation != dil || c.padding != dil {
                return bad(format!(
                    "{name} branch must be 3x3, stride 1, dilation {dil}, padding {dil}"
                ));
            }
        }
        if self.local.in_channels != self.surround.in_channels {
            return bad("branches disagree on input width".into());
        }
        if self.local.out_channels != self.surround.out_channels {
            return bad(format!(
                "branch widths differ: {} vs {}",
                self.local.out_channels, self.surround.out_channels
            ));
        }
        let c = self.context_channels();
        let se = &self.se_conv;
        if se.in_channels != c || se.out_channels != c || se.kernel_h != 1 || se.kernel_w != 1 {
            return bad(format!("gate must be a 1x1 conv over {c} channels"));
        }
        if let Some(p) = &self.projection {
            p.validate().map_err(|e| e.in_branch("projection"))?;
            if p.in_channels != c || p.kernel_h != 1 || p.kernel_w != 1 {
                return bad(format!("projection must be a 1x1 conv from {c} channels"));
            }
        }
        Ok(())
    }
}

/// Channel gate `sigmoid(conv1x1(gap(x_ctx)))`, shape `[C, 1, 1]`.
pub fn effective_se(x_ctx: &Tensor, se_conv: &ConvSpec) -> Result<Tensor> {
    if x_ctx.channels() != se_conv.in_channels {
        return Err(Error::invalid(
            "effective_se",
            format!(
                "context has {} channels, gate expects {}",
                x_ctx.channels(),
                se_conv.in_channels
            ),
        ));
    }
    let pooled = global_avg_pool(x_ctx)?;
    let z = conv2d(&pooled, se_conv)?;
    Ok(sigmoid_map(&z))
}

struct Trace {
    ctx: Tensor,
    pooled: Tensor,
    gate: Tensor,
    gated: Tensor,
}

fn trace(x: &Tensor, block: &MuseBlock) -> Result<Trace> {
    block.validate()?;
    if x.channels() != block.in_channels() {
        return Err(Error::invalid(
            "muse",
            format!("input has {} channels, block expects {}", x.channels(), block.in_channels()),
        ));
    }
    let local = conv2d(x, &block.local).map_err(|e| e.in_branch("local"))?;
    let dilated = conv2d(x, &block.surround).map_err(|e| e.in_branch("surround"))?;
    let ctx = Tensor::concat_channels(&[&local, &dilated])?;
    let pooled = global_avg_pool(&ctx).map_err(|e| e.in_branch("effective_se"))?;
    let gate = sigmoid_map(&conv2d(&pooled, &block.se_conv).map_err(|e| e.in_branch("effective_se"))?);
    let gated = pointwise(&ctx, &gate, PointwiseKind::Mul)?;
    Ok(Trace {
        ctx,
        pooled,
        gate,
        gated,
    })
}

/// Gated context features; spatial size is preserved.
pub fn muse_forward(x: &Tensor, block: &MuseBlock) -> Result<Tensor> {
    let t = trace(x, block)?;
    match &block.projection {
        Some(p) => conv2d(&t.gated, p).map_err(|e| e.in_branch("projection")),
        None => Ok(t.gated),
    }
}

impl Differentiable for MuseBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        muse_forward(x, self)
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let t = trace(x, self)?;
        let g_gated = match &self.projection {
            Some(p) => conv2d_backward_input(t.gated.shape(), p, grad_out)?,
            None => grad_out.clone(),
        };
        if g_gated.shape() != t.ctx.shape() {
            return Err(Error::ShapeMismatch {
                op: "muse_backward",
                left: t.ctx.shape(),
                right: g_gated.shape(),
            });
        }

        // d/dctx through the direct product, then through the gate.
        let mut g_ctx = pointwise(&g_gated, &t.gate, PointwiseKind::Mul)?;
        let g_gate_data: Vec<f64> = (0..t.ctx.channels())
            .map(|c| {
                g_gated
                    .plane(c)
                    .iter()
                    .zip(t.ctx.plane(c))
                    .map(|(g, v)| g * v)
                    .sum()
            })
            .collect();
        let g_z = Tensor::new(
            t.gate.channels(),
            1,
            1,
            g_gate_data
                .iter()
                .zip(t.gate.data())
                .map(|(g, s)| g * s * (1.0 - s))
                .collect(),
        )?;
        let g_pooled = conv2d_backward_input(t.pooled.shape(), &self.se_conv, &g_z)?;
        let via_gate = global_avg_pool_backward(t.ctx.shape(), &g_pooled)?;
        g_ctx = pointwise(&g_ctx, &via_gate, PointwiseKind::Add)?;

        let half = self.local.out_channels;
        let g_local = g_ctx.channel_range(0, half)?;
        let g_dilated = g_ctx.channel_range(half, self.surround.out_channels)?;
        let a = conv2d_backward_input(x.shape(), &self.local, &g_local)?;
        let b = conv2d_backward_input(x.shape(), &self.surround, &g_dilated)?;
        pointwise(&a, &b, PointwiseKind::Add)
    }
}
