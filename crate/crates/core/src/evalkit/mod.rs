//! Benchmark side: IoU, COCO-style greedy matching and average precision
//! (by category or by layer), class-wise and `{category, layer}`-wise NMS,
//! layer collapsing, and a ground-truth perturbation oracle.

mod ap;
mod iou;
mod matching;
mod nms;
mod perturb;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ap::{evaluate_ap, APConfig, APReport, GroupAp, ThresholdDiagnostics};
pub use iou::{box_iou, iou, mask_iou, Region};
pub use matching::{greedy_assign, greedy_match, Matches};
pub use nms::{collapse_layers, nms, nms_indices, nms_per_image, NmsMode};
pub use perturb::{perturb_gt_to_detections, PerturbConfig, ScoreModel};

use crate::datastore::{DatasetRecord, RleMask};
use crate::error::{Error, Result};
use crate::sprite_source::CategoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Box,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Category,
    /// Groups by layer regardless of category; detections use their predicted layer.
    Layer,
}

/// One prediction. `layer` is present for models that emit `{category, layer}` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: CategoryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    pub score: f64,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<RleMask>,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidDetection(format!(
                "score {} outside [0, 1] (image {})",
                self.score, self.image_id
            )));
        }
        let [x, y, w, h] = self.bbox;
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidDetection(format!(
                "bbox {:?} must be finite with positive size (image {})",
                self.bbox, self.image_id
            )));
        }
        if let Some(m) = &self.segmentation {
            m.check()?;
        }
        Ok(())
    }
}

/// One ground-truth instance in evaluation form.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub image_id: u64,
    pub category_id: CategoryId,
    pub layer: u32,
    pub bbox: [f64; 4],
    /// Amodal mask.
    pub segmentation: RleMask,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Image id to `(width, height)`.
    pub images: BTreeMap<u64, (u32, u32)>,
    pub instances: Vec<GtInstance>,
}

impl GroundTruth {
    pub fn from_record(record: &DatasetRecord) -> Self {
        GroundTruth {
            images: record.images.iter().map(|i| (i.id, (i.width, i.height))).collect(),
            instances: record
                .annotations
                .iter()
                .map(|a| GtInstance {
                    image_id: a.image_id,
                    category_id: a.category_id,
                    layer: a.layer,
                    bbox: a.bbox,
                    segmentation: a.segmentation.clone(),
                })
                .collect(),
        }
    }

    /// Exact copies of the ground truth with score 1.
    pub fn perfect_detections(&self) -> Vec<Detection> {
        self.instances
            .iter()
            .map(|g| Detection {
                image_id: g.image_id,
                category_id: g.category_id,
                layer: Some(g.layer),
                score: 1.0,
                bbox: g.bbox,
                segmentation: Some(g.segmentation.clone()),
            })
            .collect()
    }
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dets: Vec<Detection> = serde_json::from_slice(&data).map_err(|e| Error::json(path, e))?;
    for d in &dets {
        d.validate()?;
    }
    Ok(dets)
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let data = serde_json::to_vec(dets).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_json_shape() {
        let d = Detection {
            image_id: 3,
            category_id: 1,
            layer: None,
            score: 0.5,
            bbox: [1.0, 2.0, 3.0, 4.0],
            segmentation: None,
        };
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"image_id":3,"category_id":1,"score":0.5,"bbox":[1.0,2.0,3.0,4.0]}"#);
        let back: Detection = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn invalid_detections() {
        let mut d = Detection {
            image_id: 0,
            category_id: 0,
            layer: None,
            score: 1.5,
            bbox: [0.0, 0.0, 1.0, 1.0],
            segmentation: None,
        };
        assert!(d.validate().is_err());
        d.score = 0.5;
        d.bbox[2] = 0.0;
        assert!(d.validate().is_err());
    }
}
