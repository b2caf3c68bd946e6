//! Flat-file dataset storage: PNG rasters, one COCO-style annotations JSON
//! per split carrying amodal extensions, and a hashed manifest.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! annotations_<split>.json
//! images/<split>/<image id>.png
//! appearances/<split>/<image id>_<instance>.png   (RGBA, cropped to the amodal box)
//! appearances/<split>/<image id>_bg.png
//! ```

mod rle;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use rle::{rle_decode, rle_encode, RleMask};

use crate::annotate::{AnnotatedScene, LabeledPoint, PointLabel, StatsAccumulator};
use crate::annotate::DatasetStats;
use crate::compositor::{GenerationConfig, MaskSet, Placement};
use crate::error::{Error, Result};
use crate::orders::OcclusionKind;
use crate::raster::PixelBox;
use crate::sprite_source::{CategoryId, CategoryInfo};

pub const FORMAT_VERSION: &str = "amodal-forge/1";
pub const CLASS_ID_RULE: &str = "category_count * layer + category";

/// Class id for consumers that treat every `{category, layer}` pair as its own class.
pub fn layer_class_id(category: CategoryId, layer: u32, category_count: u32) -> u32 {
    category_count * layer + category
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub format: String,
    pub split: String,
    pub seed: u64,
    pub generation: GenerationConfig,
    /// Free-form description of where sprites and backgrounds came from.
    pub source: String,
    pub category_count: u32,
    pub class_id_rule: String,
    pub points_per_instance: usize,
}

impl DatasetInfo {
    pub fn new(split: &str, generation: GenerationConfig, source: String, category_count: u32, points_per_instance: usize) -> Self {
        DatasetInfo {
            format: FORMAT_VERSION.to_string(),
            split: split.to_string(),
            seed: generation.seed,
            generation,
            source,
            category_count,
            class_id_rule: CLASS_ID_RULE.to_string(),
            points_per_instance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub background_id: String,
    pub background_file: Option<String>,
    pub scene_seed: u64,
}

/// `(x, y, label)` with label 1 for object and 0 for background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord(pub f64, pub f64, pub u8);

impl From<&LabeledPoint> for PointRecord {
    fn from(p: &LabeledPoint) -> Self {
        PointRecord(p.x, p.y, (p.label == PointLabel::Object) as u8)
    }
}

impl From<PointRecord> for LabeledPoint {
    fn from(p: PointRecord) -> Self {
        LabeledPoint {
            x: p.0,
            y: p.1,
            label: if p.2 == 1 { PointLabel::Object } else { PointLabel::Background },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: CategoryId,
    /// Position in the image's compositing stack (0 = bottom).
    pub instance_index: usize,
    pub sprite_id: String,
    pub layer: u32,
    /// Amodal box `[x, y, w, h]`.
    pub bbox: [f64; 4],
    /// Amodal area.
    pub area: u64,
    pub visible_area: u64,
    pub invisible_area: u64,
    /// Amodal mask.
    pub segmentation: RleMask,
    pub visible_segmentation: RleMask,
    pub invisible_segmentation: RleMask,
    pub points: Vec<PointRecord>,
    pub point_seed: u64,
    pub appearance_file: Option<String>,
    pub placement: Placement,
    pub iscrowd: u8,
}

/// `(occluder index, occludee index, kind)` over an image's instance indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub image_id: u64,
    pub occlusion: Vec<(usize, usize, OcclusionKind)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub info: DatasetInfo,
    pub categories: Vec<CategoryInfo>,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub relations: Vec<RelationRecord>,
}

impl DatasetRecord {
    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &AnnotationRecord> + '_ {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == image_id)
    }

    /// Decoded masks of one image, in stack order.
    pub fn mask_sets(&self, image_id: u64) -> Result<Vec<MaskSet>> {
        let mut anns: Vec<&AnnotationRecord> = self.annotations_for(image_id).collect();
        anns.sort_by_key(|a| a.instance_index);
        anns.into_iter().map(decode_mask_set).collect()
    }

    pub fn category_names(&self) -> BTreeMap<CategoryId, String> {
        self.categories.iter().map(|c| (c.id, c.name.clone())).collect()
    }

    /// Same fold as the in-memory statistics, fed from the stored records.
    pub fn stats(&self) -> DatasetStats {
        let mut acc = StatsAccumulator::default();
        let mut by_image: HashMap<u64, Vec<&AnnotationRecord>> = HashMap::new();
        for a in &self.annotations {
            by_image.entry(a.image_id).or_default().push(a);
        }
        for img in &self.images {
            acc.add_image();
            let mut anns = by_image.remove(&img.id).unwrap_or_default();
            anns.sort_by_key(|a| a.instance_index);
            for a in anns {
                acc.add_instance(a.category_id, a.segmentation.area(), a.invisible_segmentation.area(), a.layer);
            }
        }
        acc.finish()
    }
}

fn decode_mask_set(a: &AnnotationRecord) -> Result<MaskSet> {
    let with_ctx = |rle: &RleMask, which: &str| {
        rle_decode(rle).map_err(|e| match e {
            Error::CorruptRle { sum, expected, .. } => Error::CorruptRle {
                sum,
                expected,
                context: Some(format!("annotation {} {which}", a.id)),
            },
            other => other,
        })
    };
    let amodal = with_ctx(&a.segmentation, "amodal")?;
    Ok(MaskSet {
        amodal_bbox: amodal.bounding_box().unwrap_or(PixelBox { x: 0, y: 0, w: 0, h: 0 }),
        visible: with_ctx(&a.visible_segmentation, "visible")?,
        invisible: with_ctx(&a.invisible_segmentation, "invisible")?,
        amodal,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    fn of(path: String, data: &[u8]) -> Self {
        FileEntry {
            path,
            sha256: hex::encode(Sha256::digest(data)),
            bytes: data.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub annotations: FileEntry,
    /// Sorted by path.
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub splits: BTreeMap<String, SplitManifest>,
}

pub fn annotations_path(root: &Path, split: &str) -> PathBuf {
    root.join(format!("annotations_{split}.json"))
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = manifest_path(root);
    let data = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&data).map_err(|e| Error::json(&path, e))
}

/// Re-hashes every file listed in the manifest; returns the paths that are
/// missing or whose content changed.
pub fn verify_manifest(root: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(root)?;
    let entries: Vec<&FileEntry> = manifest
        .splits
        .values()
        .flat_map(|s| std::iter::once(&s.annotations).chain(&s.files))
        .collect();
    let mut bad: Vec<String> = entries
        .par_iter()
        .filter(|e| match std::fs::read(root.join(&e.path)) {
            Ok(data) => FileEntry::of(e.path.clone(), &data) != ***e,
            Err(_) => true,
        })
        .map(|e| e.path.clone())
        .collect();
    bad.sort();
    Ok(bad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub write_appearances: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            write_appearances: true,
        }
    }
}

fn encode_png(data: &[u8], w: u32, h: u32, color: ExtendedColorType) -> std::result::Result<Vec<u8>, image::ImageError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub).write_image(data, w, h, color)?;
    Ok(out)
}

/// Files and records produced for one scene before they are committed.
struct EncodedScene {
    files: Vec<(String, Vec<u8>)>,
    image: ImageRecord,
    annotations: Vec<AnnotationRecord>,
    relation: RelationRecord,
}

fn encode_scene(scene: &AnnotatedScene, split: &str, options: WriteOptions) -> Result<EncodedScene> {
    let composed = &scene.scene;
    let id = composed.spec.scene_id;
    let canvas = composed.spec.canvas;
    let img_err = |e| Error::SceneWrite {
        scene_id: id,
        source: Box::new(Error::image(format!("scene {id}"), e)),
    };
    let mut files = Vec::new();

    let file_name = format!("images/{split}/{id:06}.png");
    let png = encode_png(composed.image.as_raw(), canvas.width, canvas.height, ExtendedColorType::Rgb8).map_err(img_err)?;
    files.push((file_name.clone(), png));

    let background_file = if options.write_appearances {
        let name = format!("appearances/{split}/{id:06}_bg.png");
        let png = encode_png(composed.background.as_raw(), canvas.width, canvas.height, ExtendedColorType::Rgb8)
            .map_err(img_err)?;
        files.push((name.clone(), png));
        Some(name)
    } else {
        None
    };

    let mut annotations = Vec::with_capacity(composed.masks.len());
    for (k, (set, placement)) in composed.masks.iter().zip(&composed.spec.placements).enumerate() {
        let appearance_file = if options.write_appearances {
            let app = &composed.appearances[k];
            let name = format!("appearances/{split}/{id:06}_{k}.png");
            let png = encode_png(app.image.as_raw(), app.bbox.w, app.bbox.h, ExtendedColorType::Rgba8).map_err(img_err)?;
            files.push((name.clone(), png));
            Some(name)
        } else {
            None
        };
        let points = &scene.points[k];
        annotations.push(AnnotationRecord {
            id: 0,
            image_id: id,
            category_id: placement.category,
            instance_index: k,
            sprite_id: placement.sprite_id.clone(),
            layer: scene.layers.layers[k],
            bbox: set.amodal_bbox.to_xywh(),
            area: set.amodal.area(),
            visible_area: set.visible.area(),
            invisible_area: set.invisible.area(),
            segmentation: rle_encode(&set.amodal),
            visible_segmentation: rle_encode(&set.visible),
            invisible_segmentation: rle_encode(&set.invisible),
            points: points.points.iter().map(PointRecord::from).collect(),
            point_seed: points.sampling_seed,
            appearance_file,
            placement: placement.clone(),
            iscrowd: 0,
        });
    }

    Ok(EncodedScene {
        files,
        image: ImageRecord {
            id,
            file_name,
            width: canvas.width,
            height: canvas.height,
            background_id: composed.spec.background_id.clone(),
            background_file,
            scene_seed: composed.spec.seed,
        },
        annotations,
        relation: RelationRecord {
            image_id: id,
            occlusion: scene
                .graph
                .edges
                .iter()
                .map(|e| (e.occluder, e.occludee, e.kind))
                .collect(),
        },
    })
}

/// Incremental writer for one split. Image files are written as scenes
/// arrive; the annotations JSON and manifest are written by [`finish`](Self::finish),
/// so a JSON never references an image that failed to write.
pub struct DatasetWriter {
    root: PathBuf,
    options: WriteOptions,
    record: DatasetRecord,
    files: Vec<FileEntry>,
    seen_images: HashSet<u64>,
}

impl DatasetWriter {
    pub fn create(root: &Path, info: DatasetInfo, categories: Vec<CategoryInfo>, options: WriteOptions) -> Result<Self> {
        let split = info.split.clone();
        let mut dirs = vec![root.join("images").join(&split)];
        if options.write_appearances {
            dirs.push(root.join("appearances").join(&split));
        }
        for dir in dirs {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(DatasetWriter {
            root: root.to_path_buf(),
            options,
            record: DatasetRecord {
                info,
                categories,
                images: Vec::new(),
                annotations: Vec::new(),
                relations: Vec::new(),
            },
            files: Vec::new(),
            seen_images: HashSet::new(),
        })
    }

    pub fn split(&self) -> &str {
        &self.record.info.split
    }

    /// Encodes and writes a batch of scenes in parallel; records are appended in batch order.
    pub fn write_scenes(&mut self, scenes: &[AnnotatedScene]) -> Result<()> {
        let split = self.record.info.split.clone();
        let root = &self.root;
        let options = self.options;
        let encoded: Vec<EncodedScene> = scenes
            .par_iter()
            .map(|s| {
                let enc = encode_scene(s, &split, options)?;
                for (name, data) in &enc.files {
                    let path = root.join(name);
                    std::fs::write(&path, data).map_err(|e| Error::SceneWrite {
                        scene_id: enc.image.id,
                        source: Box::new(Error::io(&path, e)),
                    })?;
                }
                Ok(enc)
            })
            .collect::<Result<_>>()?;
        for enc in encoded {
            if !self.seen_images.insert(enc.image.id) {
                return Err(Error::Config(format!("duplicate image id {}", enc.image.id)));
            }
            self.files
                .extend(enc.files.iter().map(|(name, data)| FileEntry::of(name.clone(), data)));
            for mut a in enc.annotations {
                a.id = self.record.annotations.len() as u64 + 1;
                self.record.annotations.push(a);
            }
            self.record.images.push(enc.image);
            self.record.relations.push(enc.relation);
        }
        Ok(())
    }

    /// Writes the annotations JSON and merges this split into `manifest.json`.
    pub fn finish(mut self) -> Result<(DatasetRecord, Manifest)> {
        let json_path = annotations_path(&self.root, &self.record.info.split);
        let json = serde_json::to_vec(&self.record).map_err(|e| Error::json(&json_path, e))?;
        std::fs::write(&json_path, &json).map_err(|e| Error::io(&json_path, e))?;

        let mut manifest = match read_manifest(&self.root) {
            Ok(m) if m.format == FORMAT_VERSION => m,
            _ => Manifest {
                format: FORMAT_VERSION.to_string(),
                splits: BTreeMap::new(),
            },
        };
        self.files.sort();
        let json_name = json_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        manifest.splits.insert(
            self.record.info.split.clone(),
            SplitManifest {
                annotations: FileEntry::of(json_name, &json),
                files: std::mem::take(&mut self.files),
            },
        );
        let mpath = manifest_path(&self.root);
        let data = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&mpath, e))?;
        std::fs::write(&mpath, data).map_err(|e| Error::io(&mpath, e))?;
        Ok((self.record, manifest))
    }
}

/// Writes a complete split in one call.
pub fn write_dataset<'a>(
    root: &Path,
    info: DatasetInfo,
    categories: Vec<CategoryInfo>,
    scenes: impl IntoIterator<Item = &'a AnnotatedScene>,
    options: WriteOptions,
) -> Result<Manifest> {
    let mut writer = DatasetWriter::create(root, info, categories, options)?;
    let scenes: Vec<AnnotatedScene> = scenes.into_iter().cloned().collect();
    for chunk in scenes.chunks(64) {
        writer.write_scenes(chunk)?;
    }
    Ok(writer.finish()?.1)
}

/// Loads and validates one split.
pub fn read_dataset(root: &Path, split: &str) -> Result<DatasetRecord> {
    let mpath = manifest_path(root);
    if !mpath.is_file() {
        return Err(Error::io(&mpath, std::io::Error::new(std::io::ErrorKind::NotFound, "manifest missing")));
    }
    let path = annotations_path(root, split);
    let data = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let record = parse_record(&data, &path)?;
    validate(&record)?;
    Ok(record)
}

/// Parses an annotations JSON, checking the format tag before the full schema.
pub fn parse_record(data: &[u8], path: &Path) -> Result<DatasetRecord> {
    let value: serde_json::Value = serde_json::from_slice(data).map_err(|e| Error::json(path, e))?;
    let found = value
        .get("info")
        .and_then(|i| i.get("format"))
        .and_then(|f| f.as_str())
        .unwrap_or("<missing>");
    if found != FORMAT_VERSION {
        return Err(Error::SchemaVersion {
            found: found.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::json(path, e))
}

/// Checks id resolution, RLE integrity and the mask partition of every annotation.
pub fn validate(record: &DatasetRecord) -> Result<()> {
    let images: HashMap<u64, &ImageRecord> = record.images.iter().map(|i| (i.id, i)).collect();
    if images.len() != record.images.len() {
        return Err(Error::Validation {
            ids: vec![],
            details: "duplicate image ids".into(),
        });
    }
    let categories: HashSet<CategoryId> = record.categories.iter().map(|c| c.id).collect();
    let mut bad: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    let mut ann_ids = HashSet::new();
    let mut per_image: HashMap<u64, usize> = HashMap::new();

    for a in &record.annotations {
        let mut problems = Vec::new();
        if !ann_ids.insert(a.id) {
            problems.push("duplicate annotation id".to_string());
        }
        if !categories.contains(&a.category_id) {
            problems.push(format!("unknown category {}", a.category_id));
        }
        let Some(img) = images.get(&a.image_id) else {
            problems.push(format!("unknown image {}", a.image_id));
            bad.entry(a.id).or_default().extend(problems);
            continue;
        };
        *per_image.entry(a.image_id).or_default() += 1;
        let set = decode_mask_set(a)?;
        if set.amodal.size() != (img.width as usize, img.height as usize) {
            problems.push("mask size differs from image size".into());
        } else if set.visible.size() != set.amodal.size() || set.invisible.size() != set.amodal.size() {
            problems.push("mask sizes disagree".into());
        } else {
            if !set.visible.is_subset_of(&set.amodal) {
                problems.push("visible mask not contained in amodal mask".into());
            }
            if !set.invisible.is_subset_of(&set.amodal) {
                problems.push("invisible mask not contained in amodal mask".into());
            }
            if set.visible.intersects(&set.invisible) {
                problems.push("visible and invisible masks overlap".into());
            }
            if set.visible.union(&set.invisible) != set.amodal {
                problems.push("visible and invisible do not cover the amodal mask".into());
            }
            if set.visible.is_empty() {
                problems.push("no visible pixels".into());
            }
        }
        if !problems.is_empty() {
            bad.entry(a.id).or_default().extend(problems);
        }
    }

    for rel in &record.relations {
        let n = per_image.get(&rel.image_id).copied();
        match n {
            None if !images.contains_key(&rel.image_id) => {
                return Err(Error::Validation {
                    ids: vec![],
                    details: format!("relations reference unknown image {}", rel.image_id),
                })
            }
            _ => {
                let n = n.unwrap_or(0);
                if rel.occlusion.iter().any(|&(i, j, _)| i >= n || j >= n || i <= j) {
                    return Err(Error::Validation {
                        ids: vec![],
                        details: format!("image {} has an occlusion edge out of range", rel.image_id),
                    });
                }
            }
        }
    }

    if bad.is_empty() {
        Ok(())
    } else {
        let details = bad
            .iter()
            .map(|(id, p)| format!("{id}: {}", p.join(", ")))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Validation {
            ids: bad.keys().copied().collect(),
            details,
        })
    }
}
