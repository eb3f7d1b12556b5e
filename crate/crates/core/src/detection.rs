use crate::error::{Error, Result};
use crate::mask::{BoundingBox, Mask};
use crate::rle::RleMask;

/// Defect taxonomy used for class ids.
pub const CLASS_NAMES: [&str; 7] = [
    "block_etch",
    "coating_bad",
    "particle",
    "pi_particle",
    "po_contamination",
    "scratch",
    "sez_burnt",
];

/// One scored, classed instance, predicted or ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub score: f64,
    pub bbox: BoundingBox,
    pub mask: Option<RleMask>,
}

impl Detection {
    pub fn new(class_id: u32, score: f64, bbox: BoundingBox) -> Self {
        Self {
            class_id,
            score,
            bbox,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: &Mask) -> Self {
        self.mask = Some(RleMask::encode(mask));
        self
    }

    /// Ground-truth instance whose box is the tight bound of `mask`.
    pub fn from_mask(class_id: u32, score: f64, mask: &Mask) -> Result<Self> {
        let bbox = mask
            .bounding_box()
            .ok_or_else(|| Error::invalid("detection", "empty mask"))?;
        Ok(Self::new(class_id, score, bbox).with_mask(mask))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(
                "detection",
                format!("score {} outside [0, 1]", self.score),
            ));
        }
        BoundingBox::new(self.bbox.x1, self.bbox.y1, self.bbox.x2, self.bbox.y2)?;
        if let Some(m) = &self.mask {
            m.validate()?;
            if !self.bbox.within(m.height, m.width) {
                return Err(Error::invalid(
                    "detection",
                    format!("box {:?} leaves the {}x{} image", self.bbox, m.height, m.width),
                ));
            }
        }
        Ok(())
    }
}
