//! Scene sampling, affine sprite rendering, layer-by-layer compositing and
//! exact amodal/visible/invisible mask derivation.

use std::collections::HashMap;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, PixelBox};
use crate::rng::{mix, rng_from_seed};
use crate::sprite_source::{Background, CategoryId, Sprite, SpriteLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All instances of a scene share one category.
    Intra,
    /// Each instance draws its category independently.
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub fn dims(self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub min: f64,
    pub max: f64,
}

impl RealRange {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// Scene sampling parameters. Every field has a default so partial JSON files work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub canvas: Canvas,
    pub instances: CountRange,
    pub scale: RealRange,
    /// Degrees.
    pub rotation: RealRange,
    pub mode: Mode,
    pub seed: u64,
    pub count: u64,
    /// Fresh-seed resamples allowed per rejected scene.
    pub max_retries: u32,
    /// Minimum fraction of a sprite's transformed mask that must land on the canvas.
    pub min_on_canvas: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            canvas: Canvas {
                width: 256,
                height: 256,
            },
            instances: CountRange { min: 2, max: 5 },
            scale: RealRange { min: 0.5, max: 1.5 },
            rotation: RealRange {
                min: 0.0,
                max: 360.0,
            },
            mode: Mode::Intra,
            seed: 0,
            count: 1000,
            max_retries: 100,
            min_on_canvas: 0.25,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return bad("canvas must be non-empty");
        }
        if self.instances.min == 0 || self.instances.min > self.instances.max {
            return bad("instance range must satisfy 1 <= min <= max");
        }
        if !(self.scale.min > 0.0 && self.scale.min <= self.scale.max && self.scale.max.is_finite()) {
            return bad("scale range must satisfy 0 < min <= max");
        }
        if !(self.rotation.min <= self.rotation.max && self.rotation.max.is_finite()) {
            return bad("rotation range must satisfy min <= max");
        }
        if !(0.0..=1.0).contains(&self.min_on_canvas) {
            return bad("min_on_canvas must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub sprite_id: String,
    pub category: CategoryId,
    /// Degrees, applied about the sprite centre.
    pub rotation: f64,
    pub scale: f64,
    /// Canvas position of the sprite centre.
    pub translation: (f64, f64),
}

/// Placements are listed bottom to top: later entries are nearer the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: u64,
    pub background_id: String,
    pub placements: Vec<Placement>,
    pub canvas: Canvas,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub amodal: Mask,
    pub visible: Mask,
    pub invisible: Mask,
    /// Tight box around `amodal`; all zeros when the amodal mask is empty.
    pub amodal_bbox: PixelBox,
}

/// Unoccluded rendering of one instance, cropped to its amodal box.
/// Pixels outside the amodal mask are fully transparent.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub bbox: PixelBox,
    pub image: RgbaImage,
}

impl Appearance {
    /// Places the crop back onto a transparent canvas.
    pub fn to_canvas(&self, canvas: Canvas) -> RgbaImage {
        let mut out = RgbaImage::new(canvas.width, canvas.height);
        for (x, y, p) in self.image.enumerate_pixels() {
            out.put_pixel(self.bbox.x + x, self.bbox.y + y, *p);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ComposedScene {
    pub spec: SceneSpec,
    pub image: RgbImage,
    /// Same order as `spec.placements`.
    pub masks: Vec<MaskSet>,
    pub appearances: Vec<Appearance>,
    pub background: RgbImage,
}

#[derive(Debug, Clone)]
pub enum Composition {
    Accepted(Box<ComposedScene>),
    /// Indices of instances left with no visible pixel.
    Rejected { hidden: Vec<usize> },
}

/// Sprite library plus backgrounds, indexed for lookup by id.
#[derive(Debug, Clone)]
pub struct Sources {
    pub library: SpriteLibrary,
    pub backgrounds: Vec<Background>,
    bg_index: HashMap<String, usize>,
}

impl Sources {
    pub fn new(library: SpriteLibrary, backgrounds: Vec<Background>) -> Result<Self> {
        if library.is_empty() || backgrounds.is_empty() {
            return Err(Error::EmptyInputs);
        }
        let bg_index = backgrounds
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        Ok(Sources {
            library,
            backgrounds,
            bg_index,
        })
    }

    pub fn background(&self, id: &str) -> Result<&Background> {
        self.bg_index
            .get(id)
            .map(|&i| &self.backgrounds[i])
            .ok_or_else(|| Error::UnknownBackground(id.to_string()))
    }

    pub fn sprite(&self, id: &str) -> Result<&Sprite> {
        self.library
            .get(id)
            .ok_or_else(|| Error::UnknownSprite(id.to_string()))
    }
}

/// Inverse of `dest = t + s * R(theta) * (src - c)`, mapping canvas points to sprite space.
#[derive(Debug, Clone, Copy)]
struct InverseAffine {
    cos: f64,
    sin: f64,
    inv_scale: f64,
    center: (f64, f64),
    translation: (f64, f64),
}

impl InverseAffine {
    fn new(sprite: &Sprite, placement: &Placement) -> Self {
        let theta = placement.rotation.to_radians();
        InverseAffine {
            cos: theta.cos(),
            sin: theta.sin(),
            inv_scale: 1.0 / placement.scale,
            center: (sprite.width() as f64 / 2.0, sprite.height() as f64 / 2.0),
            translation: placement.translation,
        }
    }

    #[inline]
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = (x - self.translation.0) * self.inv_scale;
        let dy = (y - self.translation.1) * self.inv_scale;
        (
            self.center.0 + self.cos * dx + self.sin * dy,
            self.center.1 - self.sin * dx + self.cos * dy,
        )
    }
}

/// Integer canvas-space bounds (possibly off-canvas) of the transformed sprite rectangle.
fn transformed_bounds(sprite: &Sprite, placement: &Placement) -> (i64, i64, i64, i64) {
    let theta = placement.rotation.to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    let (hw, hh) = (sprite.width() as f64 / 2.0, sprite.height() as f64 / 2.0);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (dx, dy) in [(-hw, -hh), (hw, -hh), (-hw, hh), (hw, hh)] {
        let x = placement.translation.0 + placement.scale * (c * dx - s * dy);
        let y = placement.translation.1 + placement.scale * (s * dx + c * dy);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    (
        x0.floor() as i64 - 1,
        y0.floor() as i64 - 1,
        x1.ceil() as i64 + 1,
        y1.ceil() as i64 + 1,
    )
}

/// Visits every canvas-grid pixel (on- or off-canvas) whose centre maps
/// inside the sprite's binary mask, with its sprite-space coordinates.
fn for_each_covered(sprite: &Sprite, placement: &Placement, mut f: impl FnMut(i64, i64, f64, f64)) {
    let inv = InverseAffine::new(sprite, placement);
    let (x0, y0, x1, y1) = transformed_bounds(sprite, placement);
    let mask = sprite.base_mask();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (u, v) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
            if mask.get_signed(u.floor() as i64, v.floor() as i64) {
                f(x, y, u, v);
            }
        }
    }
}

/// Fraction of the transformed sprite mask that lands on the canvas.
pub fn on_canvas_fraction(sprite: &Sprite, placement: &Placement, canvas: Canvas) -> f64 {
    let (mut on, mut total) = (0u64, 0u64);
    for_each_covered(sprite, placement, |x, y, _, _| {
        total += 1;
        if x >= 0 && y >= 0 && x < canvas.width as i64 && y < canvas.height as i64 {
            on += 1;
        }
    });
    if total == 0 {
        0.0
    } else {
        on as f64 / total as f64
    }
}

/// Alpha-weighted bilinear colour lookup at sprite-space point `(u, v)`.
fn sample_color(sprite: &Sprite, u: f64, v: f64) -> [u8; 3] {
    let (w, h) = (sprite.width() as i64, sprite.height() as i64);
    let (fx, fy) = (u - 0.5, v - 0.5);
    let (ix, iy) = (fx.floor() as i64, fy.floor() as i64);
    let (tx, ty) = (fx - ix as f64, fy - iy as f64);
    let mut acc = [0.0f64; 3];
    let mut weight = 0.0;
    for (ox, oy, wgt) in [
        (0, 0, (1.0 - tx) * (1.0 - ty)),
        (1, 0, tx * (1.0 - ty)),
        (0, 1, (1.0 - tx) * ty),
        (1, 1, tx * ty),
    ] {
        let (px, py) = ((ix + ox).clamp(0, w - 1), (iy + oy).clamp(0, h - 1));
        let a = sprite.alpha()[(py * w + px) as usize] as f64 * wgt;
        if a > 0.0 {
            let p = sprite.pixels().get_pixel(px as u32, py as u32);
            for c in 0..3 {
                acc[c] += p[c] as f64 * a;
            }
            weight += a;
        }
    }
    if weight > 0.0 {
        std::array::from_fn(|c| (acc[c] / weight).round().clamp(0.0, 255.0) as u8)
    } else {
        let p = sprite
            .pixels()
            .get_pixel(u.floor().clamp(0.0, (w - 1) as f64) as u32, v.floor().clamp(0.0, (h - 1) as f64) as u32);
        p.0
    }
}

/// A sprite rendered at its placement on a canvas-sized grid.
#[derive(Debug, Clone)]
pub struct RenderedLayer {
    /// Colour at covered pixels; black elsewhere.
    pub color: RgbImage,
    pub mask: Mask,
}

/// Renders one sprite: rotation and scale about the sprite centre, mask by
/// nearest neighbour on the binarized alpha, colour by bilinear resampling.
pub fn rasterize_placement(sprite: &Sprite, placement: &Placement, canvas: Canvas) -> Result<RenderedLayer> {
    let (w, h) = (canvas.width as usize, canvas.height as usize);
    let mut mask = Mask::new(w, h);
    let mut color = RgbImage::new(canvas.width, canvas.height);
    for_each_covered(sprite, placement, |x, y, u, v| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            mask.set(x as usize, y as usize, true);
            color.put_pixel(x as u32, y as u32, Rgb(sample_color(sprite, u, v)));
        }
    });
    if mask.is_empty() {
        return Err(Error::DegeneratePlacement(sprite.id().to_string()));
    }
    Ok(RenderedLayer { color, mask })
}

/// Splits each amodal mask into visible and invisible parts. Index order is
/// stack order: instance `i` is hidden by every `j > i`.
pub fn derive_masks(amodal: &[Mask]) -> Vec<MaskSet> {
    let mut out = Vec::with_capacity(amodal.len());
    let Some(first) = amodal.first() else {
        return out;
    };
    let mut above = Mask::new(first.width(), first.height());
    for m in amodal.iter().rev() {
        let visible = m.difference(&above);
        let invisible = m.intersection(&above);
        out.push(MaskSet {
            amodal: m.clone(),
            visible,
            invisible,
            amodal_bbox: m.bounding_box().unwrap_or(PixelBox {
                x: 0,
                y: 0,
                w: 0,
                h: 0,
            }),
        });
        above.union_in_place(m);
    }
    out.reverse();
    out
}

/// Draws a scene specification. Pure function of `(sources, config, scene_seed)`.
pub fn sample_scene_spec(
    sources: &Sources,
    config: &GenerationConfig,
    scene_id: u64,
    scene_seed: u64,
) -> Result<SceneSpec> {
    const MAX_TRANSLATION_TRIES: usize = 64;
    let library = &sources.library;
    if library.is_empty() || sources.backgrounds.is_empty() {
        return Err(Error::EmptyInputs);
    }
    let mut rng = rng_from_seed(scene_seed);
    let categories: Vec<CategoryId> = library.category_ids().collect();
    let background = &sources.backgrounds[rng.random_range(0..sources.backgrounds.len())];
    let n = rng.random_range(config.instances.min..=config.instances.max);
    let scene_category = categories[rng.random_range(0..categories.len())];

    let mut placements = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let category = match config.mode {
            Mode::Intra => scene_category,
            Mode::Inter => categories[rng.random_range(0..categories.len())],
        };
        let k = rng.random_range(0..library.category_count(category));
        let sprite = library.in_category(category).nth(k).expect("index within category");
        let rotation = config.rotation.sample(&mut rng);
        let scale = config.scale.sample(&mut rng);

        let mut placement = Placement {
            sprite_id: sprite.id().to_string(),
            category,
            rotation,
            scale,
            translation: (0.0, 0.0),
        };
        let mut best = (f64::MIN, (0.0, 0.0));
        for _ in 0..MAX_TRANSLATION_TRIES {
            placement.translation = (
                rng.random_range(0.0..config.canvas.width as f64),
                rng.random_range(0.0..config.canvas.height as f64),
            );
            let frac = on_canvas_fraction(sprite, &placement, config.canvas);
            if frac > best.0 {
                best = (frac, placement.translation);
            }
            if frac >= config.min_on_canvas {
                break;
            }
        }
        placement.translation = best.1;
        placements.push(placement);
    }
    Ok(SceneSpec {
        scene_id,
        background_id: background.id.clone(),
        placements,
        canvas: config.canvas,
        seed: scene_seed,
    })
}

/// Paints the background, then each instance bottom to top. Scenes where
/// some instance ends up with no visible pixel are rejected.
pub fn compose_scene(spec: &SceneSpec, sources: &Sources) -> Result<Composition> {
    let background = sources.background(&spec.background_id)?;
    let canvas = spec.canvas;
    let bg_pixels = if background.pixels.dimensions() == canvas.dims() {
        background.pixels.clone()
    } else {
        image::imageops::resize(
            &background.pixels,
            canvas.width,
            canvas.height,
            image::imageops::FilterType::Triangle,
        )
    };

    let layers = spec
        .placements
        .iter()
        .map(|p| rasterize_placement(sources.sprite(&p.sprite_id)?, p, canvas))
        .collect::<Result<Vec<_>>>()?;
    let amodal: Vec<Mask> = layers.iter().map(|l| l.mask.clone()).collect();
    let masks = derive_masks(&amodal);

    let hidden: Vec<usize> = masks
        .iter()
        .enumerate()
        .filter(|(_, m)| m.visible.is_empty())
        .map(|(i, _)| i)
        .collect();
    if !hidden.is_empty() {
        return Ok(Composition::Rejected { hidden });
    }

    let mut image = bg_pixels.clone();
    for layer in &layers {
        for (i, &covered) in layer.mask.as_slice().iter().enumerate() {
            if covered {
                let (x, y) = ((i % canvas.width as usize) as u32, (i / canvas.width as usize) as u32);
                image.put_pixel(x, y, *layer.color.get_pixel(x, y));
            }
        }
    }

    let appearances = layers
        .iter()
        .zip(&masks)
        .map(|(layer, set)| {
            let b = set.amodal_bbox;
            let mut crop = RgbaImage::new(b.w, b.h);
            for (x, y, p) in crop.enumerate_pixels_mut() {
                let (cx, cy) = (b.x + x, b.y + y);
                if layer.mask.get(cx as usize, cy as usize) {
                    let c = layer.color.get_pixel(cx, cy);
                    *p = Rgba([c[0], c[1], c[2], 255]);
                }
            }
            Appearance { bbox: b, image: crop }
        })
        .collect();

    Ok(Composition::Accepted(Box::new(ComposedScene {
        spec: spec.clone(),
        image,
        masks,
        appearances,
        background: bg_pixels,
    })))
}

/// Outcome of generating one scene index.
#[derive(Debug)]
enum SceneOutcome {
    Done(Box<ComposedScene>),
    Skipped,
}

fn generate_one(sources: &Sources, config: &GenerationConfig, global_seed: u64, index: u64) -> Result<SceneOutcome> {
    let base = mix(global_seed, index);
    for attempt in 0..=config.max_retries as u64 {
        let seed = if attempt == 0 { base } else { mix(base, attempt) };
        let spec = sample_scene_spec(sources, config, index, seed)?;
        match compose_scene(&spec, sources) {
            Ok(Composition::Accepted(scene)) => return Ok(SceneOutcome::Done(scene)),
            Ok(Composition::Rejected { .. }) | Err(Error::DegeneratePlacement(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    log::warn!(
        "scene {index}: no acceptable sample after {} retries, skipping",
        config.max_retries
    );
    Ok(SceneOutcome::Skipped)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchReport {
    pub generated: u64,
    pub skipped: Vec<u64>,
}

/// Number of scenes composed in parallel before being handed to the sink.
const CHUNK: u64 = 64;

/// Generates scenes `0..count`, feeding them to `sink` in index order.
/// Scene `i` draws from `mix(global_seed, i)`; rejected samples retry with
/// `mix(mix(global_seed, i), attempt)`. Parallelism uses the ambient rayon
/// pool and never changes the output.
pub fn generate_batch<F>(
    sources: &Sources,
    config: &GenerationConfig,
    global_seed: u64,
    count: u64,
    mut sink: F,
) -> Result<BatchReport>
where
    F: FnMut(ComposedScene) -> Result<()>,
{
    config.validate()?;
    if count == 0 {
        return Err(Error::Config("scene count must be at least 1".into()));
    }
    let mut report = BatchReport::default();
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let outcomes = (start..end)
            .into_par_iter()
            .map(|i| generate_one(sources, config, global_seed, i))
            .collect::<Result<Vec<_>>>()?;
        for (i, outcome) in (start..end).zip(outcomes) {
            match outcome {
                SceneOutcome::Done(scene) => {
                    report.generated += 1;
                    sink(*scene)?;
                }
                SceneOutcome::Skipped => report.skipped.push(i),
            }
        }
        if report.skipped.len() as u64 * 100 > count {
            return Err(Error::RetryExhausted {
                skipped: report.skipped.len(),
                count: count as usize,
            });
        }
        start = end;
    }
    Ok(report)
}

/// Collects [`generate_batch`] output into memory.
pub fn generate_batch_vec(
    sources: &Sources,
    config: &GenerationConfig,
    global_seed: u64,
    count: u64,
) -> Result<Vec<ComposedScene>> {
    let mut out = Vec::with_capacity(count as usize);
    generate_batch(sources, config, global_seed, count, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sprite_source::{procedural_backgrounds, CategoryInfo};

    fn square_sprite(id: &str, side: u32) -> Sprite {
        let pixels = RgbImage::from_fn(side, side, |x, y| Rgb([(x * 20) as u8, (y * 20) as u8, 90]));
        Sprite::new(id, 0, pixels, vec![1.0; (side * side) as usize]).unwrap()
    }

    fn sources_with(sprites: Vec<Sprite>) -> Sources {
        let lib = SpriteLibrary::new(
            vec![CategoryInfo {
                id: 0,
                name: "sq".into(),
            }],
            sprites,
        )
        .unwrap();
        Sources::new(lib, procedural_backgrounds(1, (64, 64), 0).unwrap()).unwrap()
    }

    fn placement(id: &str, rotation: f64, scale: f64, t: (f64, f64)) -> Placement {
        Placement {
            sprite_id: id.into(),
            category: 0,
            rotation,
            scale,
            translation: t,
        }
    }

    const CANVAS: Canvas = Canvas {
        width: 256,
        height: 256,
    };

    #[test]
    fn identity_square_area() {
        let s = square_sprite("a", 10);
        let layer = rasterize_placement(&s, &placement("a", 0.0, 1.0, (128.0, 128.0)), CANVAS).unwrap();
        assert_eq!(layer.mask.area(), 100);
        assert_eq!(layer.mask.bounding_box().unwrap(), PixelBox { x: 123, y: 123, w: 10, h: 10 });
        // colours copied exactly at identity
        assert_eq!(layer.color.get_pixel(123, 123), s.pixels().get_pixel(0, 0));
        assert_eq!(layer.color.get_pixel(132, 125), s.pixels().get_pixel(9, 2));
    }

    #[test]
    fn fully_off_canvas_is_degenerate() {
        let s = square_sprite("a", 10);
        let err = rasterize_placement(&s, &placement("a", 0.0, 1.0, (-50.0, 10.0)), CANVAS).unwrap_err();
        assert!(matches!(err, Error::DegeneratePlacement(_)));
    }

    #[test]
    fn ninety_degree_rotation_matches_pixel_rotation() {
        // asymmetric L-shape on a 6x4 raster
        let (w, h) = (6u32, 4u32);
        let alpha: Vec<f32> = (0..h)
            .flat_map(|y| (0..w).map(move |x| if y == 0 || x == 0 || (x == 4 && y == 2) { 1.0 } else { 0.0 }))
            .collect();
        let s = Sprite::new("l", 0, RgbImage::new(w, h), alpha).unwrap();
        let t = (100.0, 60.0);
        let layer = rasterize_placement(&s, &placement("l", 90.0, 1.0, t), CANVAS).unwrap();
        // oracle: source pixel centre offset (dx, dy) from sprite centre maps to (-dy, dx)
        let mut expected = Mask::new(256, 256);
        for y in 0..h {
            for x in 0..w {
                if s.base_mask().get(x as usize, y as usize) {
                    let dx = x as f64 + 0.5 - w as f64 / 2.0;
                    let dy = y as f64 + 0.5 - h as f64 / 2.0;
                    let (cx, cy) = (t.0 - dy, t.1 + dx);
                    expected.set(cx.floor() as usize, cy.floor() as usize, true);
                }
            }
        }
        assert_eq!(layer.mask, expected);
    }

    #[test]
    fn scaled_circle_area() {
        let r = 12.0f64;
        let d = 24u32;
        let alpha: Vec<f32> = (0..d)
            .flat_map(|y| {
                (0..d).map(move |x| {
                    let (dx, dy) = (x as f64 + 0.5 - r, y as f64 + 0.5 - r);
                    if dx.hypot(dy) <= r { 1.0 } else { 0.0 }
                })
            })
            .collect();
        let s = Sprite::new("c", 0, RgbImage::new(d, d), alpha).unwrap();
        let base = s.base_mask().area() as f64;
        let layer = rasterize_placement(&s, &placement("c", 0.0, 2.0, (128.0, 128.0)), CANVAS).unwrap();
        let area = layer.mask.area() as f64;
        assert!((area / (4.0 * base) - 1.0).abs() < 0.05, "{area} vs {}", 4.0 * base);
    }

    #[test]
    fn derive_masks_two_offset_squares() {
        let sq = |x0: usize| Mask::from_fn(32, 32, move |x, y| (x0..x0 + 10).contains(&x) && (5..15).contains(&y));
        let sets = derive_masks(&[sq(5), sq(10)]);
        assert_eq!(sets[0].visible.area(), 50);
        assert_eq!(sets[0].invisible.area(), 50);
        assert!(sets[1].invisible.is_empty());
        assert_eq!(sets[1].visible, sets[1].amodal);
    }

    #[test]
    fn single_instance_fully_visible() {
        let m = Mask::from_fn(8, 8, |x, _| x < 3);
        let sets = derive_masks(std::slice::from_ref(&m));
        assert_eq!(sets[0].visible, m);
        assert!(sets[0].invisible.is_empty());
    }

    #[test]
    fn identical_placements_rejected() {
        let src = sources_with(vec![square_sprite("a", 10)]);
        let spec = SceneSpec {
            scene_id: 0,
            background_id: src.backgrounds[0].id.clone(),
            placements: vec![
                placement("a", 0.0, 1.0, (30.0, 30.0)),
                placement("a", 0.0, 1.0, (30.0, 30.0)),
            ],
            canvas: Canvas { width: 64, height: 64 },
            seed: 0,
        };
        match compose_scene(&spec, &src).unwrap() {
            Composition::Rejected { hidden } => assert_eq!(hidden, vec![0]),
            Composition::Accepted(_) => panic!("bottom instance is fully hidden"),
        }
    }

    #[test]
    fn unknown_ids_error() {
        let src = sources_with(vec![square_sprite("a", 10)]);
        let mut spec = SceneSpec {
            scene_id: 0,
            background_id: "nope".into(),
            placements: vec![placement("a", 0.0, 1.0, (30.0, 30.0))],
            canvas: Canvas { width: 64, height: 64 },
            seed: 0,
        };
        assert!(matches!(compose_scene(&spec, &src), Err(Error::UnknownBackground(_))));
        spec.background_id = src.backgrounds[0].id.clone();
        spec.placements[0].sprite_id = "b".into();
        assert!(matches!(compose_scene(&spec, &src), Err(Error::UnknownSprite(_))));
    }

    #[test]
    fn non_overlapping_scene_and_pixel_colours() {
        let src = sources_with(vec![square_sprite("a", 10)]);
        let spec = SceneSpec {
            scene_id: 0,
            background_id: src.backgrounds[0].id.clone(),
            placements: vec![
                placement("a", 0.0, 1.0, (15.0, 15.0)),
                placement("a", 0.0, 1.0, (45.0, 45.0)),
            ],
            canvas: Canvas { width: 64, height: 64 },
            seed: 0,
        };
        let Composition::Accepted(scene) = compose_scene(&spec, &src).unwrap() else {
            panic!("rejected")
        };
        assert!(scene.masks.iter().all(|m| m.invisible.is_empty()));
        let sprite = src.sprite("a").unwrap();
        assert_eq!(scene.image.get_pixel(10, 10), sprite.pixels().get_pixel(0, 0));
        assert_eq!(scene.image.get_pixel(49, 49), sprite.pixels().get_pixel(9, 9));
        assert_eq!(scene.image.get_pixel(0, 63), src.backgrounds[0].pixels.get_pixel(0, 63));
        assert_eq!(scene.appearances[1].bbox, PixelBox { x: 40, y: 40, w: 10, h: 10 });
    }

    #[test]
    fn config_validation() {
        let mut c = GenerationConfig::default();
        assert!(c.validate().is_ok());
        c.instances = CountRange { min: 3, max: 2 };
        assert!(c.validate().is_err());
        let c = GenerationConfig {
            scale: RealRange { min: 0.0, max: 1.0 },
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_config_json_uses_defaults() {
        let c: GenerationConfig = serde_json::from_str(r#"{"mode":"inter","seed":9}"#).unwrap();
        assert_eq!(c.mode, Mode::Inter);
        assert_eq!(c.seed, 9);
        assert_eq!(c.instances, CountRange { min: 2, max: 5 });
    }
}
