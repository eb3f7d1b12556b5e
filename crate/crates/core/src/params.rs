//! Parameter and FLOP accounting for layer descriptor lists.
//!
//! Convolutions count `out * (in / groups) * kh * kw` weights plus `out`
//! biases, and `2 * weights * H_out * W_out` FLOPs (one multiply-add is two
//! FLOPs, bias additions ignored). Pooling, upsampling and concatenation
//! are free. The frequency enhancement block counts its 3x3 attention
//! conv, its scalar gain, and `5 N log2 N` FLOPs per forward or inverse
//! FFT of an `N`-pixel channel.
//!
//! Text form, one layer per line: `kind key=value ...`, e.g.
//! `conv in=3 out=64 k=3 s=2 p=1 h=640 w=640`. Blank lines and `#`
//! comments are skipped.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        in_ch: u64,
        out_ch: u64,
        kernel: u64,
        stride: u64,
        padding: u64,
        dilation: u64,
        groups: u64,
        bias: bool,
        h: u64,
        w: u64,
    },
    /// Depthwise conv, `groups = channels`.
    DwConv { channels: u64, kernel: u64, stride: u64, padding: u64, h: u64, w: u64 },
    /// Split-transform-merge block with `repeats` 1x1 + 3x3 bottlenecks.
    C2f { in_ch: u64, out_ch: u64, repeats: u64, h: u64, w: u64 },
    /// As `C2f` with each bottleneck replaced by a context block.
    C2fMuse { in_ch: u64, out_ch: u64, repeats: u64, h: u64, w: u64 },
    /// Stack of `repeats` context blocks.
    Muse { in_ch: u64, out_ch: u64, repeats: u64, h: u64, w: u64 },
    EffectiveSe { channels: u64, groups: u64, h: u64, w: u64 },
    Sppf { in_ch: u64, out_ch: u64, h: u64, w: u64 },
    Mptce { channels: u64, h: u64, w: u64 },
    Upsample { channels: u64, factor: u64, h: u64, w: u64 },
    Concat { channels: u64, h: u64, w: u64 },
    MaxPool { channels: u64, kernel: u64, h: u64, w: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub params: u64,
    pub flops: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            flops: self.flops + o.flops,
        }
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_cost(
    in_ch: u64,
    out_ch: u64,
    k: u64,
    stride: u64,
    padding: u64,
    dilation: u64,
    groups: u64,
    bias: bool,
    h: u64,
    w: u64,
) -> Result<Cost> {
    if groups == 0 || !in_ch.is_multiple_of(groups) || !out_ch.is_multiple_of(groups) || stride == 0 || dilation == 0 || k == 0 {
        return Err(Error::invalid(
            "count_params_flops",
            format!("invalid conv {in_ch}->{out_ch} k{k} s{stride} d{dilation} g{groups}"),
        ));
    }
    let span = dilation * (k - 1) + 1;
    let out_dim = |n: u64| -> Result<u64> {
        let padded = n + 2 * padding;
        if span > padded {
            return Err(Error::invalid(
                "count_params_flops",
                format!("kernel extent {span} exceeds padded input {padded}"),
            ));
        }
        Ok((padded - span) / stride + 1)
    };
    let weights = out_ch * (in_ch / groups) * k * k;
    Ok(Cost {
        params: weights + if bias { out_ch } else { 0 },
        flops: 2 * weights * out_dim(h)? * out_dim(w)?,
    })
}

fn same(in_ch: u64, out_ch: u64, k: u64, groups: u64, h: u64, w: u64) -> Result<Cost> {
    conv_cost(in_ch, out_ch, k, 1, k / 2, 1, groups, true, h, w)
}

/// One context unit: 3x3 local and dilated branches of `out / 2` each,
/// then a depthwise 1x1 gate over `out` channels.
fn muse_unit(in_ch: u64, out_ch: u64, h: u64, w: u64) -> Result<Cost> {
    let half = out_ch / 2;
    Ok(same(in_ch, half, 3, 1, h, w)?
        + conv_cost(in_ch, half, 3, 1, 2, 2, 1, true, h, w)?
        + conv_cost(out_ch, out_ch, 1, 1, 0, 1, out_ch, true, 1, 1)?)
}

fn fft_flops(h: u64, w: u64) -> u64 {
    let n = h * w;
    if n <= 1 {
        return 0;
    }
    (5.0 * n as f64 * (n as f64).log2()).round() as u64
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::DwConv { .. } => "dwconv",
            Layer::C2f { .. } => "c2f",
            Layer::C2fMuse { .. } => "c2f_muse",
            Layer::Muse { .. } => "muse",
            Layer::EffectiveSe { .. } => "effective_se",
            Layer::Sppf { .. } => "sppf",
            Layer::Mptce { .. } => "mptce",
            Layer::Upsample { .. } => "upsample",
            Layer::Concat { .. } => "concat",
            Layer::MaxPool { .. } => "maxpool",
        }
    }

    pub fn cost(&self) -> Result<Cost> {
        match *self {
            Layer::Conv { in_ch, out_ch, kernel, stride, padding, dilation, groups, bias, h, w } => {
                conv_cost(in_ch, out_ch, kernel, stride, padding, dilation, groups, bias, h, w)
            }
            Layer::DwConv { channels, kernel, stride, padding, h, w } => {
                conv_cost(channels, channels, kernel, stride, padding, 1, channels, true, h, w)
            }
            Layer::C2f { in_ch, out_ch, repeats, h, w } => {
                let c = out_ch / 2;
                let mut cost = same(in_ch, 2 * c, 1, 1, h, w)? + same((2 + repeats) * c, out_ch, 1, 1, h, w)?;
                for _ in 0..repeats {
                    cost = cost + same(c, c, 1, 1, h, w)? + same(c, c, 3, 1, h, w)?;
                }
                Ok(cost)
            }
            Layer::C2fMuse { in_ch, out_ch, repeats, h, w } => {
                let c = out_ch / 2;
                let mut cost = same(in_ch, 2 * c, 1, 1, h, w)? + same((2 + repeats) * c, out_ch, 1, 1, h, w)?;
                for _ in 0..repeats {
                    cost = cost + muse_unit(c, c, h, w)?;
                }
                Ok(cost)
            }
            Layer::Muse { in_ch, out_ch, repeats, h, w } => (0..repeats)
                .map(|i| muse_unit(if i == 0 { in_ch } else { out_ch }, out_ch, h, w))
                .sum(),
            Layer::EffectiveSe { channels, groups, .. } => {
                conv_cost(channels, channels, 1, 1, 0, 1, groups, true, 1, 1)
            }
            Layer::Sppf { in_ch, out_ch, h, w } => {
                let c = in_ch / 2;
                Ok(same(in_ch, c, 1, 1, h, w)? + same(4 * c, out_ch, 1, 1, h, w)?)
            }
            Layer::Mptce { channels, h, w } => {
                let bca = same(1, 1, 3, 1, h, w)?;
                Ok(Cost {
                    params: bca.params + 1,
                    flops: bca.flops + 2 * channels * fft_flops(h, w),
                })
            }
            Layer::Upsample { .. } | Layer::Concat { .. } | Layer::MaxPool { .. } => Ok(Cost::default()),
        }
    }

    /// Parses one `kind key=value ...` line.
    pub fn parse(line: &str) -> Result<Layer> {
        let mut tokens = line.split_whitespace();
        let kind = tokens
            .next()
            .ok_or_else(|| Error::invalid("layer", "empty descriptor"))?;
        let mut kv = BTreeMap::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::invalid("layer", format!("expected key=value, got `{t}`")))?;
            if kv.insert(k, v).is_some() {
                return Err(Error::invalid("layer", format!("duplicate key `{k}`")));
            }
        }
        let mut fields = Fields { kind, kv };
        let layer = match kind {
            "conv" => Layer::Conv {
                in_ch: fields.req("in")?,
                out_ch: fields.req("out")?,
                kernel: fields.req("k")?,
                stride: fields.opt("s", 1)?,
                padding: fields.opt("p", 0)?,
                dilation: fields.opt("d", 1)?,
                groups: fields.opt("g", 1)?,
                bias: fields.flag("bias", true)?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            "dwconv" => Layer::DwConv {
                channels: fields.req("c")?,
                kernel: fields.req("k")?,
                stride: fields.opt("s", 1)?,
                padding: fields.opt("p", 0)?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            "c2f" | "c2f_muse" | "muse" => {
                let (in_ch, out_ch, repeats) = (fields.req("in")?, fields.req("out")?, fields.opt("n", 1)?);
                let (h, w) = (fields.req("h")?, fields.req("w")?);
                match kind {
                    "c2f" => Layer::C2f { in_ch, out_ch, repeats, h, w },
                    "c2f_muse" => Layer::C2fMuse { in_ch, out_ch, repeats, h, w },
                    _ => Layer::Muse { in_ch, out_ch, repeats, h, w },
                }
            }
            "effective_se" => {
                let channels = fields.req("c")?;
                Layer::EffectiveSe {
                    channels,
                    groups: fields.opt("g", channels)?,
                    h: fields.req("h")?,
                    w: fields.req("w")?,
                }
            }
            "sppf" => Layer::Sppf {
                in_ch: fields.req("in")?,
                out_ch: fields.req("out")?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            "mptce" => Layer::Mptce {
                channels: fields.req("c")?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            "upsample" => Layer::Upsample {
                channels: fields.req("c")?,
                factor: fields.opt("f", 2)?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            "concat" => Layer::Concat {
                channels: fields.req("c")?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            "maxpool" => Layer::MaxPool {
                channels: fields.req("c")?,
                kernel: fields.req("k")?,
                h: fields.req("h")?,
                w: fields.req("w")?,
            },
            other => return Err(Error::UnknownLayer(other.to_string())),
        };
        fields.finish()?;
        Ok(layer)
    }
}

struct Fields<'a> {
    kind: &'a str,
    kv: BTreeMap<&'a str, &'a str>,
}

impl Fields<'_> {
    fn req(&mut self, key: &str) -> Result<u64> {
        let v = self
            .kv
            .remove(key)
            .ok_or_else(|| Error::invalid("layer", format!("{} needs `{key}`", self.kind)))?;
        v.parse()
            .map_err(|_| Error::invalid("layer", format!("{}: `{key}={v}` is not a count", self.kind)))
    }

    fn opt(&mut self, key: &str, default: u64) -> Result<u64> {
        if self.kv.contains_key(key) {
            self.req(key)
        } else {
            Ok(default)
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.kv.remove(key) {
            None => Ok(default),
            Some("true" | "1") => Ok(true),
            Some("false" | "0") => Ok(false),
            Some(v) => Err(Error::invalid("layer", format!("{}: `{key}={v}` is not a flag", self.kind))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.kv.keys().next() {
            Some(k) => Err(Error::invalid("layer", format!("{}: unknown key `{k}`", self.kind))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv { in_ch, out_ch, kernel, stride, padding, dilation, groups, bias, h, w } => write!(
                f,
                "conv in={in_ch} out={out_ch} k={kernel} s={stride} p={padding} d={dilation} g={groups} bias={bias} h={h} w={w}"
            ),
            Layer::DwConv { channels, kernel, stride, padding, h, w } => {
                write!(f, "dwconv c={channels} k={kernel} s={stride} p={padding} h={h} w={w}")
            }
            Layer::C2f { in_ch, out_ch, repeats, h, w }
            | Layer::C2fMuse { in_ch, out_ch, repeats, h, w }
            | Layer::Muse { in_ch, out_ch, repeats, h, w } => {
                write!(f, "{} in={in_ch} out={out_ch} n={repeats} h={h} w={w}", self.kind())
            }
            Layer::EffectiveSe { channels, groups, h, w } => {
                write!(f, "effective_se c={channels} g={groups} h={h} w={w}")
            }
            Layer::Sppf { in_ch, out_ch, h, w } => write!(f, "sppf in={in_ch} out={out_ch} h={h} w={w}"),
            Layer::Mptce { channels, h, w } => write!(f, "mptce c={channels} h={h} w={w}"),
            Layer::Upsample { channels, factor, h, w } => {
                write!(f, "upsample c={channels} f={factor} h={h} w={w}")
            }
            Layer::Concat { channels, h, w } => write!(f, "concat c={channels} h={h} w={w}"),
            Layer::MaxPool { channels, kernel, h, w } => {
                write!(f, "maxpool c={channels} k={kernel} h={h} w={w}")
            }
        }
    }
}

/// Parses a descriptor list, skipping blank and `#` lines.
pub fn parse_layers(text: &str) -> Result<Vec<Layer>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(Layer::parse)
        .collect()
}

pub fn count_params_flops(layers: &[Layer]) -> Result<Cost> {
    layers.iter().map(Layer::cost).sum()
}

/// The layer table of the reference detector at 640x640, without the
/// segmentation head (its internals are not specified). Totals from this
/// list approximate, and do not reproduce, the published model size.
pub const REFERENCE_LAYERS: &str = "\
# backbone
conv in=3 out=64 k=3 s=2 p=1 h=640 w=640
conv in=64 out=128 k=3 s=2 p=1 h=320 w=320
c2f_muse in=128 out=128 n=3 h=160 w=160
conv in=128 out=256 k=3 s=2 p=1 h=160 w=160
c2f_muse in=256 out=256 n=6 h=80 w=80
conv in=256 out=512 k=3 s=2 p=1 h=80 w=80
c2f_muse in=512 out=512 n=6 h=40 w=40
conv in=512 out=1024 k=3 s=2 p=1 h=40 w=40
c2f in=1024 out=1024 n=2 h=20 w=20
sppf in=1024 out=1024 h=20 w=20
# top-down neck
upsample c=1024 f=2 h=20 w=20
concat c=1536 h=40 w=40
c2f_muse in=1536 out=512 n=3 h=40 w=40
upsample c=512 f=2 h=40 w=40
concat c=768 h=80 w=80
c2f_muse in=768 out=256 n=3 h=80 w=80
upsample c=256 f=2 h=80 w=80
concat c=384 h=160 w=160
c2f_muse in=384 out=128 n=3 h=160 w=160
# bottom-up neck
conv in=128 out=128 k=3 s=2 p=1 h=160 w=160
concat c=384 h=80 w=80
c2f_muse in=384 out=256 n=3 h=80 w=80
mptce c=256 h=80 w=80
conv in=256 out=256 k=3 s=2 p=1 h=80 w=80
concat c=768 h=40 w=40
muse in=768 out=512 n=2 h=40 w=40
conv in=512 out=512 k=3 s=2 p=1 h=40 w=40
concat c=1536 h=20 w=20
c2f_muse in=1536 out=1024 n=3 h=20 w=20
# head-side layers
conv in=1024 out=1024 k=1 h=20 w=20
dwconv c=1024 k=3 p=1 h=20 w=20
upsample c=1024 f=2 h=20 w=20
conv in=1024 out=1024 k=3 p=1 h=40 w=40
effective_se c=1024 h=20 w=20
";

pub fn reference_layers() -> Vec<Layer> {
    parse_layers(REFERENCE_LAYERS).expect("reference table parses")
}
