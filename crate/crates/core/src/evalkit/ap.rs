use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matching::{det_group, greedy_assign, gt_group, iou_matrix, score_order};
use super::{Detection, GroundTruth, GtInstance, Grouping, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct APConfig {
    /// Strictly increasing, within `(0, 1]`.
    pub iou_thresholds: Vec<f64>,
    /// Evenly spaced recall points in `[0, 1]`.
    pub recall_points: usize,
    pub grouping: Grouping,
    pub target: Target,
    /// Keep at most this many top-scoring detections per image.
    pub max_dets: Option<usize>,
}

impl Default for APConfig {
    fn default() -> Self {
        APConfig {
            iou_thresholds: (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect(),
            recall_points: 101,
            grouping: Grouping::Category,
            target: Target::Box,
            max_dets: None,
        }
    }
}

impl APConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "IoU thresholds must be non-empty, strictly increasing and within (0, 1]".into(),
            ));
        }
        if self.recall_points < 2 {
            return Err(Error::Config("need at least two recall points".into()));
        }
        Ok(())
    }

    fn threshold_index(&self, value: f64) -> Option<usize> {
        self.iou_thresholds.iter().position(|&t| (t - value).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAp {
    pub ground_truths: u64,
    pub ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDiagnostics {
    pub threshold: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

/// AP values are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    pub grouping: Grouping,
    pub target: Target,
    pub mean_ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    /// Groups with at least one ground truth.
    pub per_group: BTreeMap<u32, GroupAp>,
    pub diagnostics: Vec<ThresholdDiagnostics>,
}

impl APReport {
    /// Text table: the headline AP/AP50/AP75 row, then one column per group
    /// (`L0`…`L4` at least when grouped by layer).
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let tag = match self.target {
            Target::Box => "Box",
            Target::Mask => "Mask",
        };
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:>12} {:>12} {:>12}", format!("AP^{tag}"), format!("AP50^{tag}"), format!("AP75^{tag}"));
        let _ = writeln!(s, "{:>12.3} {:>12} {:>12}", self.mean_ap, fmt_opt(self.ap50), fmt_opt(self.ap75));
        let _ = writeln!(s);
        let groups: Vec<u32> = match self.grouping {
            Grouping::Layer => {
                let max = self.per_group.keys().max().copied().unwrap_or(0).max(4);
                (0..=max).collect()
            }
            Grouping::Category => self.per_group.keys().copied().collect(),
        };
        let label = |g: u32| match self.grouping {
            Grouping::Layer => format!("L{g}"),
            Grouping::Category => format!("C{g}"),
        };
        let _ = write!(s, "{:<6}", "");
        for &g in &groups {
            let _ = write!(s, " {:>9}", label(g));
        }
        let _ = writeln!(s);
        for (name, pick) in [
            ("AP", (|g: &GroupAp| Some(g.ap)) as fn(&GroupAp) -> Option<f64>),
            ("AP50", |g: &GroupAp| g.ap50),
            ("AP75", |g: &GroupAp| g.ap75),
        ] {
            let _ = write!(s, "{name:<6}");
            for g in &groups {
                let v = self.per_group.get(g).and_then(pick);
                let _ = write!(s, " {:>9}", fmt_opt(v));
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Per-image matching output: for each threshold, `(group, score, input index, is_tp)`.
struct ImageOutcome {
    dets: Vec<(u32, f64, usize)>,
    tp: Vec<Vec<bool>>,
    gt_groups: Vec<u32>,
}

/// 101-point interpolated AP (as a fraction) for one group and threshold.
/// `ranked` holds TP flags in descending-score order.
fn interpolated_ap(ranked: &[bool], npos: u64, recall_points: usize) -> f64 {
    let mut tp = 0u64;
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for (i, &hit) in ranked.iter().enumerate() {
        tp += hit as u64;
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let n = recall_points;
    let mut sum = 0.0;
    for k in 0..n {
        let r = k as f64 / (n - 1) as f64;
        let idx = recall.partition_point(|&v| v < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / n as f64
}

/// COCO-style AP over a ground-truth split. Groups without ground truth are
/// left out of every mean; detections grouped by layer use their predicted
/// layer, so false positives count against that layer.
pub fn evaluate_ap(gt: &GroundTruth, detections: &[Detection], config: &APConfig) -> Result<APReport> {
    config.validate()?;
    if gt.instances.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let mut gts_by_image: HashMap<u64, Vec<&GtInstance>> = HashMap::new();
    for g in &gt.instances {
        gts_by_image.entry(g.image_id).or_default().push(g);
    }
    let mut dets_by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, d) in detections.iter().enumerate() {
        d.validate()?;
        if !gt.images.contains_key(&d.image_id) {
            return Err(Error::UnknownImage(d.image_id));
        }
        det_group(d, config.grouping)?;
        dets_by_image.entry(d.image_id).or_default().push(i);
    }

    let image_ids: Vec<u64> = gt.images.keys().copied().collect();
    let outcomes = image_ids
        .par_iter()
        .map(|id| -> Result<ImageOutcome> {
            let gts: Vec<GtInstance> = gts_by_image.get(id).into_iter().flatten().map(|&g| g.clone()).collect();
            let mut idx: Vec<usize> = dets_by_image.get(id).cloned().unwrap_or_default();
            let order = score_order(idx.iter().map(|&i| detections[i].score));
            idx = order.into_iter().map(|k| idx[k]).collect();
            if let Some(cap) = config.max_dets {
                idx.truncate(cap);
            }
            let dets: Vec<Detection> = idx.iter().map(|&i| detections[i].clone()).collect();
            let det_groups = dets.iter().map(|d| det_group(d, config.grouping)).collect::<Result<Vec<_>>>()?;
            let gt_groups: Vec<u32> = gts.iter().map(|g| gt_group(g, config.grouping)).collect();
            let ious = iou_matrix(&gts, &dets, &det_groups, &gt_groups, config.target)?;
            let order: Vec<usize> = (0..dets.len()).collect();
            let tp = config
                .iou_thresholds
                .iter()
                .map(|&t| {
                    greedy_assign(&order, &ious, &det_groups, &gt_groups, t)
                        .det_to_gt
                        .iter()
                        .map(Option::is_some)
                        .collect()
                })
                .collect();
            Ok(ImageOutcome {
                dets: idx
                    .iter()
                    .zip(&det_groups)
                    .map(|(&i, &g)| (g, detections[i].score, i))
                    .collect(),
                tp,
                gt_groups,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_t = config.iou_thresholds.len();
    let mut npos: BTreeMap<u32, u64> = BTreeMap::new();
    // group -> (score, input index, tp per threshold)
    let mut pooled: BTreeMap<u32, Vec<(f64, usize, Vec<bool>)>> = BTreeMap::new();
    for o in &outcomes {
        for &g in &o.gt_groups {
            *npos.entry(g).or_default() += 1;
        }
        for (k, &(g, score, i)) in o.dets.iter().enumerate() {
            pooled
                .entry(g)
                .or_default()
                .push((score, i, (0..n_t).map(|t| o.tp[t][k]).collect()));
        }
    }

    let mut diagnostics: Vec<ThresholdDiagnostics> = config
        .iou_thresholds
        .iter()
        .map(|&threshold| ThresholdDiagnostics {
            threshold,
            true_positives: 0,
            false_positives: 0,
            false_negatives: 0,
        })
        .collect();
    for dets in pooled.values() {
        for (_, _, hits) in dets {
            for (t, &hit) in hits.iter().enumerate() {
                if hit {
                    diagnostics[t].true_positives += 1;
                } else {
                    diagnostics[t].false_positives += 1;
                }
            }
        }
    }
    let total_pos: u64 = npos.values().sum();
    for d in &mut diagnostics {
        d.false_negatives = total_pos - d.true_positives;
    }

    let mut per_group = BTreeMap::new();
    let mut per_threshold_sum = vec![0.0; n_t];
    for (&g, &n) in &npos {
        let mut dets = pooled.remove(&g).unwrap_or_default();
        dets.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let aps: Vec<f64> = (0..n_t)
            .map(|t| {
                let ranked: Vec<bool> = dets.iter().map(|d| d.2[t]).collect();
                interpolated_ap(&ranked, n, config.recall_points) * 100.0
            })
            .collect();
        for (s, a) in per_threshold_sum.iter_mut().zip(&aps) {
            *s += a;
        }
        per_group.insert(
            g,
            GroupAp {
                ground_truths: n,
                ap: aps.iter().sum::<f64>() / n_t as f64,
                ap50: config.threshold_index(0.5).map(|i| aps[i]),
                ap75: config.threshold_index(0.75).map(|i| aps[i]),
            },
        );
    }
    let n_groups = npos.len() as f64;
    let at = |v: f64| config.threshold_index(v).map(|i| per_threshold_sum[i] / n_groups);
    Ok(APReport {
        grouping: config.grouping,
        target: config.target,
        mean_ap: per_threshold_sum.iter().sum::<f64>() / (n_groups * n_t as f64),
        ap50: at(0.5),
        ap75: at(0.75),
        per_group,
        diagnostics,
    })
}
