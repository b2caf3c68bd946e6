//! Foreground sprites and background textures: ingestion from image
//! directories and procedural generation for hermetic runs.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::rng::{mix, rng_from_seed};

/// Alpha values at or above this become part of the binary mask.
pub const ALPHA_THRESHOLD: f32 = 0.5;

pub type CategoryId = u32;

/// An alpha-matted cutout with a category label.
#[derive(Debug, Clone)]
pub struct Sprite {
    id: String,
    category: CategoryId,
    pixels: RgbImage,
    alpha: Vec<f32>,
    base_mask: Mask,
}

impl Sprite {
    /// Builds a sprite, deriving the binary mask from `alpha` (row-major, in `[0, 1]`).
    pub fn new(
        id: impl Into<String>,
        category: CategoryId,
        pixels: RgbImage,
        alpha: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        let (w, h) = (pixels.width() as usize, pixels.height() as usize);
        if alpha.len() != w * h {
            return Err(Error::Config(format!(
                "sprite `{id}`: alpha has {} values for a {w}x{h} raster",
                alpha.len()
            )));
        }
        let base_mask = Mask::from_vec(w, h, alpha.iter().map(|&a| a >= ALPHA_THRESHOLD).collect());
        if base_mask.is_empty() {
            return Err(Error::EmptyMask(id));
        }
        Ok(Sprite {
            id,
            category,
            pixels,
            alpha,
            base_mask,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn category(&self) -> CategoryId {
        self.category
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn base_mask(&self) -> &Mask {
        &self.base_mask
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

#[derive(Debug, Clone)]
pub struct Background {
    pub id: String,
    pub pixels: RgbImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: CategoryId,
    pub name: String,
}

/// Immutable collection of sprites grouped by category.
#[derive(Debug, Clone, Default)]
pub struct SpriteLibrary {
    categories: Vec<CategoryInfo>,
    sprites: Vec<Sprite>,
    by_category: BTreeMap<CategoryId, Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl SpriteLibrary {
    /// Sprites are stored sorted by id; duplicate ids and empty categories are rejected.
    pub fn new(categories: Vec<CategoryInfo>, mut sprites: Vec<Sprite>) -> Result<Self> {
        sprites.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_category: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
        let mut by_id = HashMap::with_capacity(sprites.len());
        for (i, s) in sprites.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate sprite id `{}`", s.id)));
            }
            if !categories.iter().any(|c| c.id == s.category) {
                return Err(Error::Config(format!(
                    "sprite `{}` has unknown category {}",
                    s.id, s.category
                )));
            }
            by_category.entry(s.category).or_default().push(i);
        }
        for c in &categories {
            if !by_category.contains_key(&c.id) {
                return Err(Error::EmptyCategory(c.name.clone()));
            }
        }
        Ok(SpriteLibrary {
            categories,
            sprites,
            by_category,
            by_id,
        })
    }

    pub fn categories(&self) -> &[CategoryInfo] {
        &self.categories
    }

    pub fn category_ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.by_category.keys().copied()
    }

    pub fn sprites(&self) -> &[Sprite] {
        &self.sprites
    }

    pub fn in_category(&self, category: CategoryId) -> impl Iterator<Item = &Sprite> + '_ {
        self.by_category
            .get(&category)
            .into_iter()
            .flatten()
            .map(|&i| &self.sprites[i])
    }

    pub fn category_count(&self, category: CategoryId) -> usize {
        self.by_category.get(&category).map_or(0, Vec::len)
    }

    pub fn get(&self, id: &str) -> Option<&Sprite> {
        self.by_id.get(id).map(|&i| &self.sprites[i])
    }

    pub fn is_empty(&self) -> bool {
        self.sprites.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sprites.len()
    }

    /// Splits every category's sprites into two disjoint pools. The held-out
    /// pool receives `round(n * fraction)` sprites per category, clamped so
    /// both sides keep at least one sprite.
    pub fn split_disjoint(&self, fraction: f64, seed: u64) -> Result<(SpriteLibrary, SpriteLibrary)> {
        use rand::seq::SliceRandom;
        let mut keep = Vec::new();
        let mut held = Vec::new();
        for (&cat, indices) in &self.by_category {
            if indices.len() < 2 {
                return Err(Error::Config(format!(
                    "category {cat} needs at least two sprites for disjoint pools"
                )));
            }
            let mut order = indices.clone();
            order.shuffle(&mut rng_from_seed(mix(seed, cat as u64)));
            let n_held = ((indices.len() as f64 * fraction).round() as usize).clamp(1, indices.len() - 1);
            for (k, &i) in order.iter().enumerate() {
                if k < n_held {
                    held.push(self.sprites[i].clone());
                } else {
                    keep.push(self.sprites[i].clone());
                }
            }
        }
        Ok((
            SpriteLibrary::new(self.categories.clone(), keep)?,
            SpriteLibrary::new(self.categories.clone(), held)?,
        ))
    }

    pub fn manifest(&self) -> LibraryManifest {
        LibraryManifest {
            categories: self.categories.clone(),
            sprites: self
                .sprites
                .iter()
                .map(|s| SpriteEntry {
                    id: s.id.clone(),
                    category: s.category,
                    width: s.width(),
                    height: s.height(),
                    mask_area: s.base_mask.area(),
                })
                .collect(),
        }
    }
}

/// JSON dump of a library's contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub categories: Vec<CategoryInfo>,
    pub sprites: Vec<SpriteEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteEntry {
    pub id: String,
    pub category: CategoryId,
    pub width: u32,
    pub height: u32,
    pub mask_area: u64,
}

/// Colour keyed out for images without an alpha channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChromaKey {
    pub color: [u8; 3],
    /// Maximum per-channel distance still treated as background.
    pub tolerance: u8,
}

impl Default for ChromaKey {
    fn default() -> Self {
        ChromaKey {
            color: [255, 255, 255],
            tolerance: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn image_files_recursive(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            image_files_recursive(&path, out)?;
        } else if is_image_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Decodes an image file into colour pixels and alpha coverage.
fn load_cutout(path: &Path, key: &ChromaKey) -> Result<(RgbImage, Vec<f32>)> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    if img.color().has_alpha() {
        let rgba = img.to_rgba8();
        let alpha = rgba.pixels().map(|p| p[3] as f32 / 255.0).collect();
        Ok((DynamicImage::ImageRgba8(rgba).to_rgb8(), alpha))
    } else {
        let rgb = img.to_rgb8();
        let alpha = rgb
            .pixels()
            .map(|p| {
                let keyed = p
                    .0
                    .iter()
                    .zip(key.color)
                    .all(|(&c, k)| c.abs_diff(k) <= key.tolerance);
                if keyed {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        Ok((rgb, alpha))
    }
}

/// Loads one sprite per readable image from `root/<category>/<file>`.
/// Category ids follow lexicographic subdirectory order; sprite ids are
/// `<category>/<file name>`.
pub fn ingest_sprites(root: &Path, key: &ChromaKey) -> Result<(SpriteLibrary, Vec<SkippedFile>)> {
    let dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if dirs.is_empty() {
        return Err(Error::NoCategories(root.to_path_buf()));
    }
    let mut categories = Vec::with_capacity(dirs.len());
    let mut jobs = Vec::new();
    for (cat, dir) in dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            jobs.push((cat as CategoryId, name.clone(), file));
        }
        categories.push(CategoryInfo {
            id: cat as CategoryId,
            name,
        });
    }

    let loaded: Vec<std::result::Result<Sprite, SkippedFile>> = jobs
        .par_iter()
        .map(|(cat, name, file)| {
            let file_name = file.file_name().unwrap_or_default().to_string_lossy();
            let id = format!("{name}/{file_name}");
            load_cutout(file, key)
                .and_then(|(pixels, alpha)| Sprite::new(id, *cat, pixels, alpha))
                .map_err(|e| SkippedFile {
                    path: file.clone(),
                    reason: e.to_string(),
                })
        })
        .collect();

    let mut sprites = Vec::new();
    let mut skipped = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => sprites.push(s),
            Err(s) => {
                log::warn!("skipping {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    let library = SpriteLibrary::new(categories, sprites)?;
    Ok((library, skipped))
}

/// Loads every readable image under `root` (recursively) and rescales it
/// bilinearly to the canvas size.
pub fn ingest_backgrounds(root: &Path, canvas: (u32, u32)) -> Result<(Vec<Background>, Vec<SkippedFile>)> {
    let mut files = Vec::new();
    image_files_recursive(root, &mut files)?;
    let loaded: Vec<std::result::Result<Background, SkippedFile>> = files
        .par_iter()
        .map(|path| {
            let img = image::open(path).map_err(|e| SkippedFile {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let rgb = img.to_rgb8();
            let pixels = if rgb.dimensions() == canvas {
                rgb
            } else {
                imageops::resize(&rgb, canvas.0, canvas.1, imageops::FilterType::Triangle)
            };
            let id = path
                .strip_prefix(root)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            Ok(Background { id, pixels })
        })
        .collect();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for r in loaded {
        match r {
            Ok(b) => out.push(b),
            Err(s) => {
                log::warn!("skipping background {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoBackgrounds(root.to_path_buf()));
    }
    Ok((out, skipped))
}

/// Shape outline for procedural sprites. Dimensions are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ShapeFamily {
    Circle { radius: f64 },
    Square { side: u32 },
    /// `|dx / semi_x|^exponent + |dy / semi_y|^exponent <= 1`
    Superellipse { semi_x: f64, semi_y: f64, exponent: f64 },
    /// Regular polygon inscribed in a circle of `radius`.
    Polygon { sides: u32, radius: f64 },
}

impl ShapeFamily {
    fn raster_size(&self) -> Result<(u32, u32)> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        let (w, h) = match *self {
            ShapeFamily::Circle { radius } if finite_pos(radius) => {
                let d = (2.0 * radius).ceil() as u32;
                (d, d)
            }
            ShapeFamily::Square { side } if side > 0 => (side, side),
            ShapeFamily::Superellipse {
                semi_x,
                semi_y,
                exponent,
            } if finite_pos(semi_x) && finite_pos(semi_y) && finite_pos(exponent) => {
                ((2.0 * semi_x).ceil() as u32, (2.0 * semi_y).ceil() as u32)
            }
            ShapeFamily::Polygon { sides, radius } if sides >= 3 && finite_pos(radius) => {
                let d = (2.0 * radius).ceil() as u32;
                (d, d)
            }
            other => return Err(Error::DegenerateShape(format!("{other:?}"))),
        };
        if w < 4 || h < 4 {
            return Err(Error::DegenerateShape(format!(
                "{self:?} rasterizes to {w}x{h}, below the 4x4 minimum"
            )));
        }
        Ok((w, h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralSpriteParams {
    pub id: String,
    pub category: CategoryId,
    pub shape: ShapeFamily,
    pub base_color: [u8; 3],
}

/// Renders a textured shape. Pure function of `(params, seed)`; the seed
/// drives the texture and, for polygons, the orientation.
pub fn generate_procedural_sprite(params: &ProceduralSpriteParams, seed: u64) -> Result<Sprite> {
    let (w, h) = params.shape.raster_size()?;
    let mut rng = rng_from_seed(seed);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);

    let phase = rng.random_range(0.0..2.0 * PI);
    let inside = |px: f64, py: f64| -> bool {
        let (dx, dy) = (px - cx, py - cy);
        match params.shape {
            ShapeFamily::Circle { radius } => dx * dx + dy * dy <= radius * radius,
            ShapeFamily::Square { .. } => true,
            ShapeFamily::Superellipse {
                semi_x,
                semi_y,
                exponent,
            } => (dx / semi_x).abs().powf(exponent) + (dy / semi_y).abs().powf(exponent) <= 1.0,
            ShapeFamily::Polygon { sides, radius } => {
                // inside iff on the inner side of every edge's supporting line
                let apothem = radius * (PI / sides as f64).cos();
                (0..sides).all(|k| {
                    let normal = phase + (2 * k + 1) as f64 * PI / sides as f64;
                    dx * normal.cos() + dy * normal.sin() <= apothem
                })
            }
        }
    };

    let hue_shift: [i32; 3] = std::array::from_fn(|_| rng.random_range(-18..=18));
    let base: [f64; 3] =
        std::array::from_fn(|c| (params.base_color[c] as i32 + hue_shift[c]).clamp(0, 255) as f64);
    let spots: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(3..9))
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(1.0..(w.min(h) as f64 / 6.0).max(1.5)),
                rng.random_range(0.7..0.9),
            )
        })
        .collect();
    let stripe_freq = rng.random_range(0.05..0.25);
    let stripe_amp = rng.random_range(0.0..0.12);
    let light = (rng.random_range(-0.5..0.0) * cx, rng.random_range(-0.5..0.0) * cy);
    let max_r = (cx * cx + cy * cy).sqrt();

    let mut pixels = RgbImage::new(w, h);
    let mut alpha = vec![0.0f32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !inside(px, py) {
                pixels.put_pixel(x, y, Rgb([255, 255, 255]));
                continue;
            }
            alpha[(y * w + x) as usize] = 1.0;
            let r = ((px - cx - light.0).powi(2) + (py - cy - light.1).powi(2)).sqrt() / max_r;
            let mut shade = 1.1 - 0.4 * r;
            shade *= 1.0 + stripe_amp * (stripe_freq * (px + 0.6 * py)).sin();
            for &(sx, sy, sr, darken) in &spots {
                if (px - sx).powi(2) + (py - sy).powi(2) <= sr * sr {
                    shade *= darken;
                }
            }
            let noise: f64 = rng.random_range(-10.0..10.0);
            let c: [u8; 3] =
                std::array::from_fn(|k| (base[k] * shade + noise).round().clamp(0.0, 255.0) as u8);
            pixels.put_pixel(x, y, Rgb(c));
        }
    }
    Sprite::new(params.id.clone(), params.category, pixels, alpha)
}

/// Settings for a procedurally generated sprite library and background set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProceduralConfig {
    pub categories: u32,
    pub sprites_per_category: u32,
    /// Nominal sprite extent in pixels; individual sprites span 80 to 100% of it.
    pub sprite_size: u32,
    pub backgrounds: u32,
}

impl Default for ProceduralConfig {
    fn default() -> Self {
        ProceduralConfig {
            categories: 10,
            sprites_per_category: 8,
            sprite_size: 200,
            backgrounds: 16,
        }
    }
}

const PALETTE: [[u8; 3]; 10] = [
    [222, 184, 40],
    [170, 190, 60],
    [226, 110, 120],
    [170, 30, 40],
    [60, 120, 40],
    [235, 120, 30],
    [140, 170, 110],
    [80, 40, 100],
    [50, 140, 60],
    [110, 160, 80],
];

fn category_shape(category: u32, size: f64, rng: &mut impl Rng) -> ShapeFamily {
    let r = size / 2.0;
    match category % 5 {
        0 => ShapeFamily::Circle { radius: r },
        1 => ShapeFamily::Superellipse {
            semi_x: r,
            semi_y: r * rng.random_range(0.75..0.9),
            exponent: 2.0,
        },
        2 => ShapeFamily::Superellipse {
            semi_x: r,
            semi_y: r * rng.random_range(0.35..0.5),
            exponent: 2.0,
        },
        3 => ShapeFamily::Polygon {
            sides: rng.random_range(6..=9),
            radius: r,
        },
        _ => ShapeFamily::Superellipse {
            semi_x: r,
            semi_y: r * rng.random_range(0.8..1.0),
            exponent: 2.6,
        },
    }
}

pub fn procedural_library(config: &ProceduralConfig, seed: u64) -> Result<SpriteLibrary> {
    if config.categories == 0 || config.sprites_per_category == 0 {
        return Err(Error::Config("procedural library needs categories and sprites".into()));
    }
    let categories: Vec<CategoryInfo> = (0..config.categories)
        .map(|id| CategoryInfo {
            id,
            name: format!("shape_{id:02}"),
        })
        .collect();
    let params: Vec<(ProceduralSpriteParams, u64)> = categories
        .iter()
        .flat_map(|c| (0..config.sprites_per_category).map(move |k| (c.id, k)))
        .map(|(cat, k)| {
            let sprite_seed = mix(mix(seed, cat as u64), k as u64);
            let mut rng = rng_from_seed(sprite_seed);
            let size = config.sprite_size as f64 * rng.random_range(0.8..1.0);
            let params = ProceduralSpriteParams {
                id: format!("shape_{cat:02}/{k:03}"),
                category: cat,
                shape: category_shape(cat, size, &mut rng),
                base_color: PALETTE[cat as usize % PALETTE.len()],
            };
            (params, mix(sprite_seed, 1))
        })
        .collect();
    let sprites = params
        .par_iter()
        .map(|(p, s)| generate_procedural_sprite(p, *s))
        .collect::<Result<Vec<_>>>()?;
    SpriteLibrary::new(categories, sprites)
}

/// Stripe, checker and blotch textures filling the canvas.
pub fn procedural_backgrounds(count: u32, canvas: (u32, u32), seed: u64) -> Result<Vec<Background>> {
    if count == 0 {
        return Err(Error::Config("procedural background count must be positive".into()));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(mix(seed ^ 0xB6_B6_B6, k as u64));
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
            let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
            let kind = k % 3;
            let freq = rng.random_range(0.03..0.2);
            let angle = rng.random_range(0.0..PI);
            let cell = rng.random_range(8..40);
            let mut pixels = RgbImage::new(canvas.0, canvas.1);
            for (x, y, p) in pixels.enumerate_pixels_mut() {
                let (fx, fy) = (x as f64, y as f64);
                let t = match kind {
                    0 => 0.5 + 0.5 * (freq * (fx * angle.cos() + fy * angle.sin())).sin(),
                    1 => (((x / cell) + (y / cell)) % 2) as f64,
                    _ => {
                        0.5 + 0.25 * (freq * fx).sin() * (freq * 1.3 * fy).cos()
                            + 0.25 * (freq * 0.7 * (fx + fy)).sin()
                    }
                };
                let n: f64 = rng.random_range(-8.0..8.0);
                *p = Rgb(std::array::from_fn(|c| {
                    (a[c] * t + b[c] * (1.0 - t) + n).round().clamp(0.0, 255.0) as u8
                }));
            }
            Background {
                id: format!("texture_{k:03}"),
                pixels,
            }
        })
        .collect())
}
