use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::{rle_decode, rle_encode};
use crate::error::Result;
use crate::raster::Mask;
use crate::rng::{mix, rng_from_seed};

use super::iou::box_iou;
use super::{Detection, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    Constant { value: f64 },
    Uniform,
    /// Score equals the IoU between the perturbed and the original box.
    IouLinked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// Standard deviation of box offsets (relative to box size) and of log-scale changes.
    pub box_jitter: f64,
    pub score: ScoreModel,
    pub drop_rate: f64,
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            box_jitter: 0.0,
            score: ScoreModel::Constant { value: 1.0 },
            drop_rate: 0.0,
            duplicate_rate: 0.0,
            seed: 0,
        }
    }
}

/// Extra jitter applied to duplicates on top of `box_jitter`.
const DUPLICATE_JITTER: f64 = 0.1;

fn jitter_box(b: [f64; 4], sigma: f64, z: [f64; 4]) -> [f64; 4] {
    let w = b[2] * (sigma * z[2]).exp();
    let h = b[3] * (sigma * z[3]).exp();
    let cx = b[0] + b[2] / 2.0 + sigma * b[2] * z[0];
    let cy = b[1] + b[3] / 2.0 + sigma * b[3] * z[1];
    [cx - w / 2.0, cy - h / 2.0, w, h]
}

/// Nearest-neighbour remap of a mask so that box `from` lands on box `to`.
fn remap_mask(mask: &Mask, from: [f64; 4], to: [f64; 4]) -> Mask {
    if from == to {
        return mask.clone();
    }
    let (sx, sy) = (from[2] / to[2], from[3] / to[3]);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let u = from[0] + (x as f64 + 0.5 - to[0]) * sx;
        let v = from[1] + (y as f64 + 0.5 - to[1]) * sy;
        mask.get_signed(u.floor() as i64, v.floor() as i64)
    })
}

/// Turns ground truth into synthetic detections with controlled errors.
/// Each instance consumes a fixed number of draws from its own stream
/// (`mix(seed, index)`), so changing one noise parameter leaves every other
/// random choice unchanged. Zero noise reproduces the ground truth exactly.
pub fn perturb_gt_to_detections(gt: &GroundTruth, config: &PerturbConfig) -> Result<Vec<Detection>> {
    let mut out = Vec::with_capacity(gt.instances.len());
    for (i, g) in gt.instances.iter().enumerate() {
        let mut rng = rng_from_seed(mix(config.seed, i as u64));
        let drop_u: f64 = rng.random();
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let score_u: f64 = rng.random();
        let dup_u: f64 = rng.random();
        let dup_z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));

        if drop_u < config.drop_rate {
            continue;
        }
        let make = |sigma: f64, z: [f64; 4], scale_score: f64| -> Result<Detection> {
            let bbox = jitter_box(g.bbox, sigma, z);
            let score = match config.score {
                ScoreModel::Constant { value } => value,
                ScoreModel::Uniform => score_u,
                ScoreModel::IouLinked => box_iou(&g.bbox, &bbox),
            } * scale_score;
            let segmentation = if bbox == g.bbox {
                g.segmentation.clone()
            } else {
                rle_encode(&remap_mask(&rle_decode(&g.segmentation)?, g.bbox, bbox))
            };
            Ok(Detection {
                image_id: g.image_id,
                category_id: g.category_id,
                layer: Some(g.layer),
                score: score.clamp(0.0, 1.0),
                bbox,
                segmentation: Some(segmentation),
            })
        };
        out.push(make(config.box_jitter, z, 1.0)?);
        if dup_u < config.duplicate_rate {
            out.push(make(config.box_jitter + DUPLICATE_JITTER, dup_z, 0.5)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remap_identity_and_shift() {
        let m = Mask::from_fn(20, 20, |x, y| (2..6).contains(&x) && (3..9).contains(&y));
        let b = [2.0, 3.0, 4.0, 6.0];
        assert_eq!(remap_mask(&m, b, b), m);
        let moved = remap_mask(&m, b, [5.0, 3.0, 4.0, 6.0]);
        assert_eq!(moved, m.translated(3, 0));
        let doubled = remap_mask(&m, b, [2.0, 3.0, 8.0, 12.0]);
        assert_eq!(doubled.area(), 4 * m.area());
    }

    #[test]
    fn jitter_zero_is_identity() {
        let b = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(jitter_box(b, 0.0, [1.0, -1.0, 0.5, 2.0]), b);
    }
}
