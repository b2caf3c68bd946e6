use crate::datastore::rle_decode;
use crate::error::{Error, Result};
use crate::raster::Mask;

use super::iou::{iou, Region};
use super::{Detection, GtInstance, Grouping, Target};

/// One-to-one assignment between detections and ground truths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matches {
    pub det_to_gt: Vec<Option<usize>>,
    pub gt_to_det: Vec<Option<usize>>,
}

impl Matches {
    pub fn true_positives(&self) -> usize {
        self.det_to_gt.iter().filter(|m| m.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.det_to_gt.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_to_det.iter().filter(|m| m.is_none()).count()
    }
}

/// Walks detections in `order`; each takes the still-unmatched ground truth
/// of its own group with the highest IoU at or above `threshold` (ties go to
/// the lower ground-truth index). `ious[d][g]` is the detection/gt IoU.
pub fn greedy_assign(order: &[usize], ious: &[Vec<f64>], det_groups: &[u32], gt_groups: &[u32], threshold: f64) -> Matches {
    let mut m = Matches {
        det_to_gt: vec![None; det_groups.len()],
        gt_to_det: vec![None; gt_groups.len()],
    };
    for &d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &gg) in gt_groups.iter().enumerate() {
            if gg != det_groups[d] || m.gt_to_det[g].is_some() {
                continue;
            }
            let v = ious[d][g];
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            m.det_to_gt[d] = Some(g);
            m.gt_to_det[g] = Some(d);
        }
    }
    m
}

/// Indices sorted by descending score; equal scores keep input order.
pub(crate) fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

pub(crate) fn gt_group(gt: &GtInstance, grouping: Grouping) -> u32 {
    match grouping {
        Grouping::Category => gt.category_id,
        Grouping::Layer => gt.layer,
    }
}

pub(crate) fn det_group(det: &Detection, grouping: Grouping) -> Result<u32> {
    match grouping {
        Grouping::Category => Ok(det.category_id),
        Grouping::Layer => det.layer.ok_or(Error::MissingLayer { image_id: det.image_id }),
    }
}

/// IoU matrix `[det][gt]`; pairs from different groups are left at 0.
pub(crate) fn iou_matrix(
    gts: &[GtInstance],
    dets: &[Detection],
    det_groups: &[u32],
    gt_groups: &[u32],
    target: Target,
) -> Result<Vec<Vec<f64>>> {
    let decode_all = |rles: Vec<Option<&crate::datastore::RleMask>>| -> Result<Vec<Option<Mask>>> {
        rles.into_iter().map(|r| r.map(rle_decode).transpose()).collect()
    };
    let (gt_masks, det_masks) = match target {
        Target::Box => (vec![None; gts.len()], vec![None; dets.len()]),
        Target::Mask => {
            let missing = dets.iter().find(|d| d.segmentation.is_none());
            if let Some(d) = missing {
                return Err(Error::InvalidDetection(format!(
                    "mask evaluation needs a segmentation on every detection (image {})",
                    d.image_id
                )));
            }
            (
                decode_all(gts.iter().map(|g| Some(&g.segmentation)).collect())?,
                decode_all(dets.iter().map(|d| d.segmentation.as_ref()).collect())?,
            )
        }
    };
    let mut out = vec![vec![0.0; gts.len()]; dets.len()];
    for (d, row) in out.iter_mut().enumerate() {
        for (g, cell) in row.iter_mut().enumerate() {
            if det_groups[d] != gt_groups[g] {
                continue;
            }
            *cell = iou(
                Region {
                    bbox: dets[d].bbox,
                    mask: det_masks[d].as_ref(),
                },
                Region {
                    bbox: gts[g].bbox,
                    mask: gt_masks[g].as_ref(),
                },
                target,
            )?;
        }
    }
    Ok(out)
}

/// COCO-style matching of one image's detections against its ground truth.
/// Detections are processed by descending score with ties in input order;
/// the result is indexed by the original positions.
pub fn greedy_match(
    gts: &[GtInstance],
    dets: &[Detection],
    threshold: f64,
    grouping: Grouping,
    target: Target,
) -> Result<Matches> {
    let det_groups = dets.iter().map(|d| det_group(d, grouping)).collect::<Result<Vec<_>>>()?;
    let gt_groups: Vec<u32> = gts.iter().map(|g| gt_group(g, grouping)).collect();
    let ious = iou_matrix(gts, dets, &det_groups, &gt_groups, target)?;
    let order = score_order(dets.iter().map(|d| d.score));
    Ok(greedy_assign(&order, &ious, &det_groups, &gt_groups, threshold))
}
