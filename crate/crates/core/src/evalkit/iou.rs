use crate::error::{Error, Result};
use crate::raster::Mask;

use super::Target;

/// Intersection over union of two `[x, y, w, h]` boxes.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::MaskSize(a.size(), b.size()));
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// A box with an optional decoded mask, in image coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Region<'a> {
    pub bbox: [f64; 4],
    pub mask: Option<&'a Mask>,
}

pub fn iou(a: Region<'_>, b: Region<'_>, target: Target) -> Result<f64> {
    match target {
        Target::Box => Ok(box_iou(&a.bbox, &b.bbox)),
        Target::Mask => match (a.mask, b.mask) {
            (Some(ma), Some(mb)) => mask_iou(ma, mb),
            _ => Err(Error::InvalidDetection("mask IoU requires masks on both sides".into())),
        },
    }
}
