//! Run-length coding of binary masks.
//!
//! Runs are row-major and alternate background/foreground, starting with
//! background. A mask whose first pixel is set therefore starts with a
//! zero-length run; no other run may be empty.

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<u32>,
}

impl RleMask {
    pub fn encode(mask: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len: u32 = 0;
        for &b in mask.bits() {
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
        if len > 0 || runs.is_empty() {
            runs.push(len);
        }
        Self {
            height: mask.height(),
            width: mask.width(),
            runs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.runs.iter().map(|&r| r as u64).sum();
        let expected = (self.height * self.width) as u64;
        if total != expected {
            return Err(Error::invalid(
                "rle",
                format!("runs cover {total} pixels, grid has {expected}"),
            ));
        }
        if let Some(i) = self.runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::invalid("rle", format!("empty run at position {}", i + 1)));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<Mask> {
        self.validate()?;
        let mut bits = Vec::with_capacity(self.height * self.width);
        for (i, &r) in self.runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        Mask::new(self.height, self.width, bits)
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_cases() {
        assert_eq!(RleMask::encode(&Mask::empty(2, 2)).runs, vec![4]);
        let full = Mask::from_fn(2, 2, |_, _| true);
        assert_eq!(RleMask::encode(&full).runs, vec![0, 4]);
        let m = Mask::new(1, 5, vec![false, true, true, false, true]).unwrap();
        let r = RleMask::encode(&m);
        assert_eq!(r.runs, vec![1, 2, 1, 1]);
        assert_eq!(r.area(), 3);
        assert_eq!(r.decode().unwrap(), m);
    }

    #[test]
    fn rejects_bad_runs() {
        let bad_sum = RleMask { height: 2, width: 2, runs: vec![1, 2] };
        assert!(bad_sum.decode().is_err());
        let interior_zero = RleMask { height: 2, width: 2, runs: vec![2, 0, 2] };
        assert!(interior_zero.decode().is_err());
    }
}
