//! Flat binary tensor files and named tensor bundles.
//!
//! A tensor file is
//!
//! ```text
//! b"WTXT" | u32 version=1 | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//! ```
//!
//! and a bundle is `b"WTXB" | u32 version=1 | u32 count` followed by
//! `count` entries of `u32 name_len | name (UTF-8) | u32 rank | dims | data`.
//! All integers and reals are little-endian; data is row-major.

use crate::error::{Error, Result};
use crate::muse::MuseBlock;
use crate::tensor::{ConvSpec, Tensor};

const TENSOR_MAGIC: &[u8; 4] = b"WTXT";
const BUNDLE_MAGIC: &[u8; 4] = b"WTXB";
const VERSION: u32 = 1;

/// Row-major array of any rank.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl FlatTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::invalid("flat tensor", "dimension product overflows"))?;
        if n != data.len() {
            return Err(Error::invalid(
                "flat tensor",
                format!("dims {dims:?} need {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Self {
            dims: vec![s.channels, s.height, s.width],
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let (c, h, w) = match self.dims[..] {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            _ => {
                return Err(Error::invalid(
                    "flat tensor",
                    format!("rank {} cannot be a feature map", self.dims.len()),
                ))
            }
        };
        Tensor::new(c, h, w, self.data.clone())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.pos, format!("truncated {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return Err(Error::format(0, format!("expected magic {:?}", String::from_utf8_lossy(magic))));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn body(&mut self) -> Result<FlatTensor> {
        let rank = self.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u64("dims")?;
            dims.push(usize::try_from(d).map_err(|_| Error::format(at, "dimension too large"))?);
        }
        let at = self.pos;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(at, "dimension product overflows"))?;
        let raw = self.take(n, "data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FlatTensor { dims, data })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos, "trailing bytes"));
        }
        Ok(())
    }
}

fn write_body(out: &mut Vec<u8>, t: &FlatTensor) {
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_tensor(t: &FlatTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * (t.dims.len() + t.data.len()));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_body(&mut out, t);
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FlatTensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(TENSOR_MAGIC)?;
    let t = r.body()?;
    r.finish()?;
    Ok(t)
}

pub fn encode_bundle(entries: &[(String, FlatTensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_body(&mut out, t);
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(String, FlatTensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(BUNDLE_MAGIC)?;
    let count = r.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at, "name is not UTF-8"))?
            .to_string();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(Error::format(at, format!("duplicate entry `{name}`")));
        }
        out.push((name, r.body()?));
    }
    r.finish()?;
    Ok(out)
}

fn conv_entries(prefix: &str, c: &ConvSpec, out: &mut Vec<(String, FlatTensor)>) {
    let hyper = [c.stride, c.padding, c.dilation, c.groups].map(|v| v as f64);
    out.push((format!("{prefix}.config"), FlatTensor { dims: vec![4], data: hyper.to_vec() }));
    out.push((
        format!("{prefix}.weight"),
        FlatTensor {
            dims: vec![c.out_channels, c.in_channels / c.groups, c.kernel_h, c.kernel_w],
            data: c.weights.clone(),
        },
    ));
    if let Some(b) = &c.bias {
        out.push((format!("{prefix}.bias"), FlatTensor { dims: vec![b.len()], data: b.clone() }));
    }
}

fn conv_from_entries(prefix: &str, entries: &mut Vec<(String, FlatTensor)>) -> Result<Option<ConvSpec>> {
    let mut take = |suffix: &str| {
        let key = format!("{prefix}.{suffix}");
        entries.iter().position(|(n, _)| *n == key).map(|i| entries.remove(i).1)
    };
    let (config, weight, bias) = (take("config"), take("weight"), take("bias"));
    let (Some(config), Some(weight)) = (config, weight) else {
        if bias.is_some() {
            return Err(Error::invalid("muse bundle", format!("{prefix}.bias without weights")));
        }
        return Ok(None);
    };
    let as_count = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
            Ok(x as usize)
        } else {
            Err(Error::invalid("muse bundle", format!("{prefix}.config holds {x}")))
        }
    };
    let ([s, p, d, g], [o, ipg, kh, kw]) = (&config.data[..], &weight.dims[..]) else {
        return Err(Error::invalid("muse bundle", format!("{prefix}: bad config or weight rank")));
    };
    let groups = as_count(*g)?;
    let spec = ConvSpec {
        in_channels: ipg * groups,
        out_channels: *o,
        kernel_h: *kh,
        kernel_w: *kw,
        stride: as_count(*s)?,
        padding: as_count(*p)?,
        dilation: as_count(*d)?,
        groups,
        weights: weight.data,
        bias: bias.map(|b| b.data),
    };
    spec.validate().map_err(|e| e.in_branch("bundle"))?;
    Ok(Some(spec))
}

/// Serialises the block's convolutions as `local.*`, `surround.*`, `se.*`
/// and optionally `projection.*` entries.
pub fn encode_muse(block: &MuseBlock) -> Vec<u8> {
    let mut e = Vec::new();
    conv_entries("local", &block.local, &mut e);
    conv_entries("surround", &block.surround, &mut e);
    conv_entries("se", &block.se_conv, &mut e);
    if let Some(p) = &block.projection {
        conv_entries("projection", p, &mut e);
    }
    encode_bundle(&e)
}

pub fn decode_muse(bytes: &[u8]) -> Result<MuseBlock> {
    let mut entries = decode_bundle(bytes)?;
    let need = |c: Option<ConvSpec>, name: &str| {
        c.ok_or_else(|| Error::invalid("muse bundle", format!("missing `{name}` conv")))
    };
    let local = need(conv_from_entries("local", &mut entries)?, "local")?;
    let surround = need(conv_from_entries("surround", &mut entries)?, "surround")?;
    let se_conv = need(conv_from_entries("se", &mut entries)?, "se")?;
    let projection = conv_from_entries("projection", &mut entries)?;
    if let Some((name, _)) = entries.first() {
        return Err(Error::invalid("muse bundle", format!("unknown entry `{name}`")));
    }
    let block = MuseBlock {
        local,
        surround,
        se_conv,
        projection,
    };
    block.validate()?;
    Ok(block)
}
