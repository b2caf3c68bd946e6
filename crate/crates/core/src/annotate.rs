//! Point-based weak labels and dataset statistics.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compositor::{ComposedScene, MaskSet};
use crate::error::{Error, Result};
use crate::orders::{assign_layers, build_occlusion_graph, LayerAssignment, OcclusionGraph};
use crate::raster::{Mask, PixelBox};
use crate::rng::{mix, rng_from_seed};
use crate::sprite_source::CategoryId;

/// Points collected per instance.
pub const DEFAULT_POINTS: usize = 10;
/// Points kept per training iteration.
pub const DEFAULT_SUBSAMPLE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointLabel {
    Background,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    pub label: PointLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotation {
    /// Index of the instance within its scene.
    pub instance: usize,
    pub points: Vec<LabeledPoint>,
    pub sampling_seed: u64,
}

/// Label lookup uses the pixel containing the point; points off the mask raster are background.
pub fn label_for(amodal: &Mask, x: f64, y: f64) -> PointLabel {
    if amodal.get_signed(x.floor() as i64, y.floor() as i64) {
        PointLabel::Object
    } else {
        PointLabel::Background
    }
}

/// Draws `n` points uniformly over the amodal box (every pixel of the box,
/// boundary pixels included, is equally likely) and labels them by amodal
/// membership, so occluded parts of the object count as object.
pub fn sample_points(mask_set: &MaskSet, instance: usize, n: usize, seed: u64) -> PointAnnotation {
    let PixelBox { x, y, w, h } = mask_set.amodal_bbox;
    let mut rng = rng_from_seed(seed);
    let points = (0..n)
        .map(|_| {
            let px = x as f64 + rng.random::<f64>() * w as f64;
            let py = y as f64 + rng.random::<f64>() * h as f64;
            LabeledPoint {
                x: px,
                y: py,
                label: label_for(&mask_set.amodal, px, py),
            }
        })
        .collect();
    PointAnnotation {
        instance,
        points,
        sampling_seed: seed,
    }
}

/// Uniform without-replacement subset of `k` points, kept in original order.
pub fn subsample_points(ann: &PointAnnotation, k: usize, seed: u64) -> Result<PointAnnotation> {
    let available = ann.points.len();
    if k > available {
        return Err(Error::NotEnoughPoints {
            requested: k,
            available,
        });
    }
    let mut chosen = index::sample(&mut rng_from_seed(seed), available, k).into_vec();
    chosen.sort_unstable();
    Ok(PointAnnotation {
        instance: ann.instance,
        points: chosen.into_iter().map(|i| ann.points[i]).collect(),
        sampling_seed: seed,
    })
}

/// A composed scene together with its order and point annotations.
#[derive(Debug, Clone)]
pub struct AnnotatedScene {
    pub scene: ComposedScene,
    pub graph: OcclusionGraph,
    pub layers: LayerAssignment,
    pub points: Vec<PointAnnotation>,
}

/// Point seeds derive from the scene seed and instance index.
pub fn annotate_scene(scene: ComposedScene, points_per_instance: usize) -> Result<AnnotatedScene> {
    let amodal: Vec<Mask> = scene.masks.iter().map(|m| m.amodal.clone()).collect();
    let graph = build_occlusion_graph(&amodal);
    let layers = assign_layers(&graph)?;
    let point_seed = mix(scene.spec.seed, 0x504F_494E_5453);
    let points = scene
        .masks
        .iter()
        .enumerate()
        .map(|(i, m)| sample_points(m, i, points_per_instance, mix(point_seed, i as u64)))
        .collect();
    Ok(AnnotatedScene {
        scene,
        graph,
        layers,
        points,
    })
}

/// Dataset-level counts in the style of a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: u64,
    pub instances: u64,
    pub occluded_instances: u64,
    pub category_counts: BTreeMap<CategoryId, u64>,
    pub category_ratios: BTreeMap<CategoryId, f64>,
    /// Mean of `|invisible| / |amodal|` over all instances, in percent.
    pub avg_occlusion_rate: f64,
    /// Same mean restricted to occluded instances, in percent.
    pub avg_occlusion_rate_occluded: f64,
    pub layer_histogram: Vec<u64>,
}

impl DatasetStats {
    pub fn occluded_fraction(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.occluded_instances as f64 / self.instances as f64
        }
    }

    /// Plain-text rendering: a totals table, a category table and the layer histogram.
    pub fn to_table(&self, category_names: &BTreeMap<CategoryId, String>) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>10} {:>12} {:>12} {:>16} {:>22}",
            "Images", "Instances", "Occluded", "Avg. Occ. Rate %", "Occ. Rate (occluded) %"
        );
        let _ = writeln!(
            s,
            "{:>10} {:>12} {:>12} {:>16.2} {:>22.2}",
            self.images,
            self.instances,
            self.occluded_instances,
            self.avg_occlusion_rate,
            self.avg_occlusion_rate_occluded
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<20} {:>10} {:>10}", "Category", "Count", "Ratio %");
        let cats: std::collections::BTreeSet<CategoryId> =
            self.category_counts.keys().chain(category_names.keys()).copied().collect();
        for cat in &cats {
            let count = self.category_counts.get(cat).copied().unwrap_or(0);
            let name = category_names.get(cat).cloned().unwrap_or_else(|| cat.to_string());
            let _ = writeln!(
                s,
                "{:<20} {:>10} {:>10.2}",
                name,
                count,
                self.category_ratios.get(cat).copied().unwrap_or(0.0) * 100.0
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<8} {:>10}", "Layer", "Instances");
        for (layer, count) in self.layer_histogram.iter().enumerate() {
            let _ = writeln!(s, "{:<8} {:>10}", format!("L{layer}"), count);
        }
        s
    }
}

/// Sequential fold producing [`DatasetStats`]; `merge` combines partial folds.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    images: u64,
    instances: u64,
    occluded: u64,
    categories: BTreeMap<CategoryId, u64>,
    rate_sum: f64,
    layers: Vec<u64>,
}

impl StatsAccumulator {
    pub fn add_image(&mut self) {
        self.images += 1;
    }

    pub fn add_instance(&mut self, category: CategoryId, amodal_area: u64, invisible_area: u64, layer: u32) {
        self.instances += 1;
        if invisible_area > 0 {
            self.occluded += 1;
        }
        *self.categories.entry(category).or_default() += 1;
        if amodal_area > 0 {
            self.rate_sum += invisible_area as f64 / amodal_area as f64;
        }
        if self.layers.len() <= layer as usize {
            self.layers.resize(layer as usize + 1, 0);
        }
        self.layers[layer as usize] += 1;
    }

    pub fn add_scene(&mut self, scene: &AnnotatedScene) {
        self.add_image();
        for (i, (m, p)) in scene.scene.masks.iter().zip(&scene.scene.spec.placements).enumerate() {
            self.add_instance(p.category, m.amodal.area(), m.invisible.area(), scene.layers.layers[i]);
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.images += other.images;
        self.instances += other.instances;
        self.occluded += other.occluded;
        for (k, v) in &other.categories {
            *self.categories.entry(*k).or_default() += v;
        }
        self.rate_sum += other.rate_sum;
        if self.layers.len() < other.layers.len() {
            self.layers.resize(other.layers.len(), 0);
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
    }

    pub fn finish(&self) -> DatasetStats {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        DatasetStats {
            images: self.images,
            instances: self.instances,
            occluded_instances: self.occluded,
            category_counts: self.categories.clone(),
            category_ratios: self
                .categories
                .iter()
                .map(|(&k, &v)| (k, ratio(v, self.instances)))
                .collect(),
            avg_occlusion_rate: if self.instances == 0 {
                0.0
            } else {
                self.rate_sum / self.instances as f64 * 100.0
            },
            avg_occlusion_rate_occluded: if self.occluded == 0 {
                0.0
            } else {
                self.rate_sum / self.occluded as f64 * 100.0
            },
            layer_histogram: self.layers.clone(),
        }
    }
}

/// Statistics over in-memory annotated scenes.
pub fn compute_stats<'a>(scenes: impl IntoIterator<Item = &'a AnnotatedScene>) -> DatasetStats {
    let mut acc = StatsAccumulator::default();
    for s in scenes {
        acc.add_scene(s);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::derive_masks;

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(32, 32, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    #[test]
    fn box_filling_mask_is_all_object() {
        let set = &derive_masks(&[rect(4, 4, 14, 10)])[0];
        let ann = sample_points(set, 0, 10, 1);
        assert_eq!(ann.points.len(), 10);
        assert!(ann.points.iter().all(|p| p.label == PointLabel::Object));
        assert!(ann.points.iter().all(|p| set.amodal_bbox.contains_point(p.x, p.y)));
    }

    #[test]
    fn occluded_points_are_object() {
        let sets = derive_masks(&[rect(0, 0, 10, 10), rect(0, 0, 10, 5)]);
        let bottom = &sets[0];
        let ann = sample_points(bottom, 0, 200, 3);
        let hidden: Vec<_> = ann
            .points
            .iter()
            .filter(|p| bottom.invisible.get(p.x as usize, p.y as usize))
            .collect();
        assert!(!hidden.is_empty());
        assert!(hidden.iter().all(|p| p.label == PointLabel::Object));
    }

    #[test]
    fn object_fraction_converges() {
        // triangle inside its 20x20 box
        let m = Mask::from_fn(32, 32, |x, y| x < 20 && y < 20 && x <= y);
        let set = &derive_masks(&[m])[0];
        let ann = sample_points(set, 0, 10_000, 77);
        let frac = ann.points.iter().filter(|p| p.label == PointLabel::Object).count() as f64 / 10_000.0;
        let exact = set.amodal.area() as f64 / set.amodal_bbox.area() as f64;
        assert!((frac - exact).abs() <= 0.02, "{frac} vs {exact}");
    }

    #[test]
    fn subsample_identity_and_determinism() {
        let set = &derive_masks(&[rect(0, 0, 10, 10)])[0];
        let ann = sample_points(set, 0, 10, 5);
        assert_eq!(subsample_points(&ann, 10, 1).unwrap().points, ann.points);
        let a = subsample_points(&ann, 5, 9).unwrap();
        let b = subsample_points(&ann, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 5);
        assert!(matches!(
            subsample_points(&ann, 11, 0),
            Err(Error::NotEnoughPoints {
                requested: 11,
                available: 10
            })
        ));
    }

    #[test]
    fn subsample_inclusion_frequency() {
        let set = &derive_masks(&[rect(0, 0, 10, 10)])[0];
        let ann = sample_points(set, 0, 10, 5);
        let trials = 20_000u64;
        let mut hits = [0u64; 10];
        for s in 0..trials {
            for p in subsample_points(&ann, 5, s).unwrap().points {
                let i = ann.points.iter().position(|q| *q == p).unwrap();
                hits[i] += 1;
            }
        }
        for h in hits {
            let f = h as f64 / trials as f64;
            assert!((f - 0.5).abs() <= 0.02, "{f}");
        }
    }

    #[test]
    fn half_hidden_pair_rate() {
        let mut acc = StatsAccumulator::default();
        acc.add_image();
        acc.add_instance(0, 100, 50, 1);
        acc.add_instance(0, 100, 0, 0);
        let s = acc.finish();
        assert_eq!(s.avg_occlusion_rate, 25.0);
        assert_eq!(s.avg_occlusion_rate_occluded, 50.0);
        assert_eq!(s.occluded_instances, 1);
        assert_eq!(s.layer_histogram, vec![1, 1]);
        assert_eq!(s.category_ratios[&0], 1.0);
    }

    #[test]
    fn merge_matches_sequential() {
        let mut a = StatsAccumulator::default();
        let mut b = StatsAccumulator::default();
        let mut all = StatsAccumulator::default();
        for (k, acc) in [&mut a, &mut b].into_iter().enumerate() {
            acc.add_image();
            acc.add_instance(k as u32, 10, k as u64 * 4, k as u32);
        }
        all.add_image();
        all.add_instance(0, 10, 0, 0);
        all.add_image();
        all.add_instance(1, 10, 4, 1);
        a.merge(&b);
        assert_eq!(a.finish(), all.finish());
    }
}
