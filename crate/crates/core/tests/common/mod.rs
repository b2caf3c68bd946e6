//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::path::Path;

use amodal_forge::annotate::{annotate_scene, AnnotatedScene, DEFAULT_POINTS};
use amodal_forge::compositor::{generate_batch_vec, Canvas, CountRange, GenerationConfig, Sources};
use amodal_forge::datastore::{DatasetInfo, DatasetRecord, DatasetWriter, Manifest, WriteOptions};
use amodal_forge::evalkit::{Detection, GroundTruth};
use amodal_forge::raster::Mask;
use amodal_forge::sprite_source::{procedural_backgrounds, procedural_library, ProceduralConfig};

pub fn sources(sprite_size: u32, canvas: u32, seed: u64) -> Sources {
    let cfg = ProceduralConfig {
        categories: 4,
        sprites_per_category: 3,
        sprite_size,
        backgrounds: 3,
    };
    Sources::new(
        procedural_library(&cfg, seed).unwrap(),
        procedural_backgrounds(cfg.backgrounds, (canvas, canvas), seed).unwrap(),
    )
    .unwrap()
}

pub fn default_sources(seed: u64) -> Sources {
    let cfg = ProceduralConfig::default();
    let canvas = GenerationConfig::default().canvas;
    Sources::new(
        procedural_library(&cfg, seed).unwrap(),
        procedural_backgrounds(cfg.backgrounds, canvas.dims(), seed).unwrap(),
    )
    .unwrap()
}

pub fn small_config(canvas: u32, max_instances: u32, seed: u64, count: u64) -> GenerationConfig {
    GenerationConfig {
        canvas: Canvas {
            width: canvas,
            height: canvas,
        },
        instances: CountRange {
            min: 1,
            max: max_instances,
        },
        seed,
        count,
        ..GenerationConfig::default()
    }
}

pub fn annotated_scenes(sources: &Sources, config: &GenerationConfig) -> Vec<AnnotatedScene> {
    generate_batch_vec(sources, config, config.seed, config.count)
        .unwrap()
        .into_iter()
        .map(|s| annotate_scene(s, DEFAULT_POINTS).unwrap())
        .collect()
}

pub fn write_split(root: &Path, split: &str, config: &GenerationConfig, sources: &Sources, scenes: &[AnnotatedScene]) -> (DatasetRecord, Manifest) {
    let categories = sources.library.categories().to_vec();
    let info = DatasetInfo::new(split, config.clone(), "test fixture".into(), categories.len() as u32, DEFAULT_POINTS);
    let mut w = DatasetWriter::create(root, info, categories, WriteOptions::default()).unwrap();
    for chunk in scenes.chunks(16) {
        w.write_scenes(chunk).unwrap();
    }
    w.finish().unwrap()
}

/// Visible and invisible masks by scanning, for every pixel, which instance
/// is topmost among those whose amodal mask covers it.
pub fn topmost_scan(amodal: &[Mask]) -> Vec<(Mask, Mask)> {
    let (w, h) = (amodal[0].width(), amodal[0].height());
    let mut visible: Vec<Mask> = amodal.iter().map(|_| Mask::new(w, h)).collect();
    let mut invisible = visible.clone();
    for y in 0..h {
        for x in 0..w {
            let top = (0..amodal.len()).rev().find(|&i| amodal[i].get(x, y));
            for (i, m) in amodal.iter().enumerate() {
                if m.get(x, y) {
                    if Some(i) == top {
                        visible[i].set(x, y, true);
                    } else {
                        invisible[i].set(x, y, true);
                    }
                }
            }
        }
    }
    visible.into_iter().zip(invisible).collect()
}

/// `direct[i][j]`: some pixel of `j` is covered, among instances above `j`, by `i` alone.
/// `overlap[i][j]`: `i` is above `j` and their amodal masks intersect.
pub fn pixel_relations(amodal: &[Mask]) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let n = amodal.len();
    let (w, h) = (amodal[0].width(), amodal[0].height());
    let mut direct = vec![vec![false; n]; n];
    let mut overlap = vec![vec![false; n]; n];
    for y in 0..h {
        for x in 0..w {
            let covering: Vec<usize> = (0..n).filter(|&i| amodal[i].get(x, y)).collect();
            for (a, &j) in covering.iter().enumerate() {
                let above = &covering[a + 1..];
                for &i in above {
                    overlap[i][j] = true;
                }
                if above.len() == 1 {
                    direct[above[0]][j] = true;
                }
            }
        }
    }
    (direct, overlap)
}

/// Layers by the recurrence, evaluated from the top of the stack down.
pub fn recurrence_layers(direct: &[Vec<bool>]) -> Vec<u32> {
    let n = direct.len();
    let mut layers = vec![0u32; n];
    for j in (0..n).rev() {
        layers[j] = (j + 1..n)
            .filter(|&i| direct[i][j])
            .map(|i| layers[i] + 1)
            .max()
            .unwrap_or(0);
    }
    layers
}

pub fn box_iou_ref(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Box AP by category, straight from the definition: per threshold and
/// category, rank detections (score descending, input order on ties), match
/// each to the best unmatched same-image gt at or above the threshold
/// (lowest gt index on ties), build the PR curve, take the precision
/// envelope, read it at recall k/100 and average. Returns a percentage.
pub fn reference_box_ap(gt: &GroundTruth, dets: &[Detection]) -> f64 {
    let thresholds: Vec<f64> = (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect();
    let mut categories: Vec<u32> = gt.instances.iter().map(|g| g.category_id).collect();
    categories.sort();
    categories.dedup();
    let mut total = 0.0;
    for &t in &thresholds {
        for &c in &categories {
            let gts: Vec<usize> = (0..gt.instances.len()).filter(|&g| gt.instances[g].category_id == c).collect();
            let mut ranked: Vec<usize> = (0..dets.len()).filter(|&d| dets[d].category_id == c).collect();
            ranked.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
            let mut taken = vec![false; gt.instances.len()];
            let mut hits = Vec::new();
            for &d in &ranked {
                let mut best: Option<(usize, f64)> = None;
                for &g in &gts {
                    if taken[g] || gt.instances[g].image_id != dets[d].image_id {
                        continue;
                    }
                    let v = box_iou_ref(dets[d].bbox, gt.instances[g].bbox);
                    if v >= t && best.is_none_or(|(_, b)| v > b) {
                        best = Some((g, v));
                    }
                }
                if let Some((g, _)) = best {
                    taken[g] = true;
                }
                hits.push(best.is_some());
            }
            let npos = gts.len() as f64;
            let mut tp = 0.0;
            let pr: Vec<(f64, f64)> = hits
                .iter()
                .enumerate()
                .map(|(k, &h)| {
                    tp += h as u8 as f64;
                    (tp / npos, tp / (k + 1) as f64)
                })
                .collect();
            let mut ap = 0.0;
            for k in 0..=100 {
                let r = k as f64 / 100.0;
                let p = pr.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max);
                ap += p;
            }
            total += ap / 101.0;
        }
    }
    100.0 * total / (thresholds.len() * categories.len()) as f64
}

/// Crafted fixture for the layer-prior NMS property. Each image holds two to
/// four well-separated clusters of two or three same-category 40 px squares,
/// each shifted 3 px right of the one below, so every pair inside a cluster
/// has IoU ≥ 0.739. Layers come from the real mask/graph pipeline.
/// Detections copy the ground truth, with higher scores for higher (less occluded) instances.
pub fn stacked_cluster_fixture(images: u64, seed: u64) -> (GroundTruth, Vec<Detection>) {
    use amodal_forge::compositor::derive_masks;
    use amodal_forge::datastore::rle_encode;
    use amodal_forge::evalkit::GtInstance;
    use amodal_forge::orders::{assign_layers, build_occlusion_graph};
    use amodal_forge::rng::{mix, rng_from_seed};
    use rand::Rng;

    const CANVAS: usize = 128;
    const SIDE: usize = 40;
    const STEP: usize = 3;
    let mut gt = GroundTruth::default();
    let mut dets = Vec::new();
    for image_id in 0..images {
        let mut rng = rng_from_seed(mix(seed, image_id));
        gt.images.insert(image_id, (CANVAS as u32, CANVAS as u32));
        let clusters = rng.random_range(2..=4usize);
        let mut rects: Vec<(usize, usize, u32)> = Vec::new();
        for c in 0..clusters {
            let (ox, oy) = ((c % 2) * 64 + 4, (c / 2) * 64 + 4);
            let category = rng.random_range(0..3u32);
            let depth = rng.random_range(2..=3usize);
            for k in 0..depth {
                rects.push((ox + k * STEP, oy, category));
            }
        }
        let amodal: Vec<Mask> = rects
            .iter()
            .map(|&(x0, y0, _)| {
                Mask::from_fn(CANVAS, CANVAS, |x, y| (x0..x0 + SIDE).contains(&x) && (y0..y0 + SIDE).contains(&y))
            })
            .collect();
        let sets = derive_masks(&amodal);
        let layers = assign_layers(&build_occlusion_graph(&amodal)).unwrap();
        for (k, ((x0, y0, category), set)) in rects.iter().zip(&sets).enumerate() {
            let layer = layers.layers[k];
            let bbox = [*x0 as f64, *y0 as f64, SIDE as f64, SIDE as f64];
            let segmentation = rle_encode(&set.amodal);
            gt.instances.push(GtInstance {
                image_id,
                category_id: *category,
                layer,
                bbox,
                segmentation: segmentation.clone(),
            });
            dets.push(Detection {
                image_id,
                category_id: *category,
                layer: Some(layer),
                score: 0.9 - 0.2 * layer as f64 + rng.random_range(0.0..0.05),
                bbox,
                segmentation: Some(segmentation),
            });
        }
    }
    (gt, dets)
}

/// Greedy NMS written out pairwise, for cross-checking kept counts.
pub fn reference_nms_count(dets: &[Detection], threshold: f64, use_layer: bool) -> usize {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].image_id == dets[i].image_id
                && dets[k].category_id == dets[i].category_id
                && (!use_layer || dets[k].layer == dets[i].layer)
                && box_iou_ref(dets[k].bbox, dets[i].bbox) > threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.len()
}

/// Tiny random problems: up to 5 gts and 5 dets over two images and two categories.
pub fn micro_case(seed: u64) -> (GroundTruth, Vec<Detection>) {
    use amodal_forge::datastore::rle_encode;
    use amodal_forge::evalkit::GtInstance;
    use amodal_forge::rng::rng_from_seed;
    use rand::Rng;

    let mut rng = rng_from_seed(seed);
    let mut gt = GroundTruth::default();
    gt.images.insert(0, (64, 64));
    gt.images.insert(1, (64, 64));
    let rand_box = |rng: &mut rand_chacha::ChaCha8Rng| {
        [
            rng.random_range(0..30) as f64,
            rng.random_range(0..30) as f64,
            rng.random_range(4..20) as f64,
            rng.random_range(4..20) as f64,
        ]
    };
    let n_gt = rng.random_range(1..=5);
    for _ in 0..n_gt {
        gt.instances.push(GtInstance {
            image_id: rng.random_range(0..2),
            category_id: rng.random_range(0..2),
            layer: 0,
            bbox: rand_box(&mut rng),
            segmentation: rle_encode(&Mask::new(64, 64)),
        });
    }
    let n_det = rng.random_range(0..=5);
    let mut dets = Vec::new();
    for _ in 0..n_det {
        let bbox = if rng.random_bool(0.6) && !gt.instances.is_empty() {
            let g = &gt.instances[rng.random_range(0..gt.instances.len())];
            let mut b = g.bbox;
            b[0] += rng.random_range(-3..=3) as f64;
            b[2] += rng.random_range(-2..=2) as f64;
            dets.push(Detection {
                image_id: g.image_id,
                category_id: if rng.random_bool(0.85) { g.category_id } else { 1 - g.category_id },
                layer: None,
                score: (rng.random_range(1..=10) as f64) / 10.0,
                bbox: b,
                segmentation: None,
            });
            continue;
        } else {
            rand_box(&mut rng)
        };
        dets.push(Detection {
            image_id: rng.random_range(0..2),
            category_id: rng.random_range(0..2),
            layer: None,
            score: (rng.random_range(1..=10) as f64) / 10.0,
            bbox,
            segmentation: None,
        });
    }
    (gt, dets)
}
