//! Line-oriented detection records.
//!
//! One detection per line:
//!
//! ```text
//! image_id class_id score x1 y1 x2 y2 [rle H W run run ...]
//! ```
//!
//! Fields are separated by single spaces, lines end in LF, and lines
//! starting with `#` are comments. Reals are printed in their shortest
//! round-trip form, so parsing a printed record gives back the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::mask::BoundingBox;
use crate::metrics::ImageDetections;
use crate::rle::RleMask;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detection: Detection,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, detection: Detection) -> Self {
        Self {
            image_id: image_id.into(),
            detection,
        }
    }

    fn check_id(id: &str) -> Result<()> {
        if id.is_empty() || id.starts_with('#') || id.chars().any(char::is_whitespace) {
            return Err(Error::invalid("records", format!("bad image id {id:?}")));
        }
        Ok(())
    }
}

pub fn print_record(out: &mut String, r: &DetectionRecord) {
    let d = &r.detection;
    let b = &d.bbox;
    // {} on f64 is the shortest representation that parses back exactly
    let _ = write!(
        out,
        "{} {} {} {} {} {} {}",
        r.image_id, d.class_id, d.score, b.x1, b.y1, b.x2, b.y2
    );
    if let Some(m) = &d.mask {
        let _ = write!(out, " rle {} {}", m.height, m.width);
        for run in &m.runs {
            let _ = write!(out, " {run}");
        }
    }
    out.push('\n');
}

/// Renders records after validating each one.
pub fn print_records(records: &[DetectionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        DetectionRecord::check_id(&r.image_id)?;
        r.detection.validate()?;
        print_record(&mut out, r);
    }
    Ok(out)
}

fn field<'a, T: std::str::FromStr>(
    it: &mut impl Iterator<Item = &'a str>,
    name: &str,
    offset: usize,
) -> Result<T> {
    let tok = it
        .next()
        .ok_or_else(|| Error::format(offset, format!("missing {name}")))?;
    tok.parse()
        .map_err(|_| Error::format(offset, format!("bad {name} `{tok}`")))
}

pub fn parse_record(line: &str, offset: usize) -> Result<DetectionRecord> {
    let mut it = line.split(' ');
    let image_id: String = field(&mut it, "image id", offset)?;
    DetectionRecord::check_id(&image_id).map_err(|e| Error::format(offset, e.to_string()))?;
    let class_id = field(&mut it, "class id", offset)?;
    let score: f64 = field(&mut it, "score", offset)?;
    let coords: [f64; 4] = [
        field(&mut it, "x1", offset)?,
        field(&mut it, "y1", offset)?,
        field(&mut it, "x2", offset)?,
        field(&mut it, "y2", offset)?,
    ];
    let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
        .map_err(|e| Error::format(offset, e.to_string()))?;
    let mut det = Detection::new(class_id, score, bbox);
    match it.next() {
        None => {}
        Some("rle") => {
            let height = field(&mut it, "mask height", offset)?;
            let width = field(&mut it, "mask width", offset)?;
            let runs = it
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| Error::format(offset, format!("bad run `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            det.mask = Some(RleMask { height, width, runs });
        }
        Some(t) => return Err(Error::format(offset, format!("unexpected field `{t}`"))),
    }
    det.validate().map_err(|e| Error::format(offset, e.to_string()))?;
    Ok(DetectionRecord::new(image_id, det))
}

/// Parses a record file. Errors carry the byte offset of the bad line.
pub fn parse_records(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        if line.contains('\r') {
            return Err(Error::format(offset, "CR in line; records use LF endings"));
        }
        if !line.is_empty() && !line.starts_with('#') {
            out.push(parse_record(line, offset)?);
        }
        offset += raw.len();
    }
    Ok(out)
}

/// Pairs predictions with ground truth by image id. Images appearing in
/// either list are kept, ordered by id.
pub fn group_by_image(preds: &[DetectionRecord], gts: &[DetectionRecord]) -> Vec<ImageDetections> {
    let mut map: BTreeMap<&str, ImageDetections> = BTreeMap::new();
    for (r, is_pred) in preds.iter().map(|r| (r, true)).chain(gts.iter().map(|r| (r, false))) {
        let img = map.entry(&r.image_id).or_insert_with(|| ImageDetections {
            image_id: r.image_id.clone(),
            ..Default::default()
        });
        if is_pred {
            img.preds.push(r.detection.clone());
        } else {
            img.gts.push(r.detection.clone());
        }
    }
    map.into_values().collect()
}
