//! Uncompressed COCO run-length encoding: column-major scan, runs alternate
//! starting with zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`, as in COCO.
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn height(&self) -> usize {
        self.size[0] as usize
    }

    pub fn width(&self) -> usize {
        self.size[1] as usize
    }

    /// Number of set pixels, read from the odd runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn check(&self) -> Result<()> {
        let sum: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.size[0] as u64 * self.size[1] as u64;
        if sum != expected {
            return Err(Error::CorruptRle {
                sum,
                expected,
                context: None,
            });
        }
        Ok(())
    }
}

pub fn rle_encode(mask: &Mask) -> RleMask {
    let (w, h) = mask.size();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        size: [h as u32, w as u32],
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<Mask> {
    rle.check()?;
    let (w, h) = (rle.width(), rle.height());
    let mut mask = Mask::new(w, h);
    let mut pos = 0usize;
    let mut value = false;
    for &run in &rle.counts {
        if value {
            for p in pos..pos + run as usize {
                mask.set(p / h, p % h, true);
            }
        }
        pos += run as usize;
        value = !value;
    }
    Ok(mask)
}
