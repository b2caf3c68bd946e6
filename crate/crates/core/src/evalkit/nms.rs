use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::iou::box_iou;
use super::matching::score_order;
use super::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmsMode {
    /// Suppression only among detections of the same category.
    Class,
    /// Suppression only among detections sharing category and layer.
    ClassLayer,
}

type GroupKey = (u64, u32, Option<u32>);

fn group_key(d: &Detection, mode: NmsMode) -> Result<GroupKey> {
    match mode {
        NmsMode::Class => Ok((d.image_id, d.category_id, None)),
        NmsMode::ClassLayer => d
            .layer
            .map(|l| (d.image_id, d.category_id, Some(l)))
            .ok_or(Error::MissingLayer { image_id: d.image_id }),
    }
}

/// Greedy suppression by box IoU: within each group, walk detections by
/// descending score and drop any whose IoU with an already kept detection
/// exceeds `iou_threshold`. Returns kept indices in input order. Detections
/// from different images never suppress each other.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, mode: NmsMode) -> Result<Vec<usize>> {
    let keys = dets.iter().map(|d| group_key(d, mode)).collect::<Result<Vec<_>>>()?;
    let mut kept_by_group: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    let mut keep = vec![false; dets.len()];
    for i in score_order(dets.iter().map(|d| d.score)) {
        let kept = kept_by_group.entry(keys[i]).or_default();
        if kept.iter().all(|&k| box_iou(&dets[k].bbox, &dets[i].bbox) <= iou_threshold) {
            kept.push(i);
            keep[i] = true;
        }
    }
    Ok((0..dets.len()).filter(|&i| keep[i]).collect())
}

pub fn nms(dets: &[Detection], iou_threshold: f64, mode: NmsMode) -> Result<Vec<Detection>> {
    Ok(nms_indices(dets, iou_threshold, mode)?
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}

/// Same as [`nms`]; named for call sites that pass a whole detection file.
pub fn nms_per_image(dets: &[Detection], iou_threshold: f64, mode: NmsMode) -> Result<Vec<Detection>> {
    nms(dets, iou_threshold, mode)
}

/// Drops predicted layers, turning `{category, layer}` predictions into
/// plain category predictions. Nothing is re-suppressed.
pub fn collapse_layers(dets: &[Detection]) -> Vec<Detection> {
    dets.iter()
        .map(|d| Detection {
            layer: None,
            ..d.clone()
        })
        .collect()
}
