//! Static overlay panel for one image: composite with amodal contours,
//! visible fill with hatched invisible regions, and point annotations.

use image::{Rgb, RgbImage};

use crate::compositor::MaskSet;
use crate::datastore::{read_dataset, AnnotationRecord, DatasetRecord};
use crate::error::{Error, Result};

use super::{ForgeConfig, InspectArgs};

const GAP: u32 = 4;
const HATCH_PERIOD: u32 = 6;
const HATCH_WIDTH: u32 = 2;
const BOX_COLOR: [u8; 3] = [0, 220, 0];
const OBJECT_POINT: [u8; 3] = [230, 0, 0];
const BACKGROUND_POINT: [u8; 3] = [0, 60, 255];
const EMPTY: [u8; 3] = [24, 24, 24];

const INSTANCE_COLORS: [[u8; 3]; 8] = [
    [255, 200, 0],
    [0, 200, 255],
    [255, 80, 200],
    [120, 255, 80],
    [255, 120, 40],
    [160, 120, 255],
    [255, 255, 255],
    [0, 255, 170],
];

fn instance_color(k: usize) -> [u8; 3] {
    INSTANCE_COLORS[k % INSTANCE_COLORS.len()]
}

fn scaled(c: [u8; 3], f: f32) -> [u8; 3] {
    c.map(|v| (v as f32 * f).round().clamp(0.0, 255.0) as u8)
}

fn on_hatch(x: u32, y: u32) -> bool {
    (x + y) % HATCH_PERIOD < HATCH_WIDTH
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn contour_tile(composite: &RgbImage, masks: &[MaskSet]) -> RgbImage {
    let mut tile = composite.clone();
    for (k, set) in masks.iter().enumerate() {
        let edge = set.amodal.contour();
        for (x, y, p) in tile.enumerate_pixels_mut() {
            if edge.get(x as usize, y as usize) {
                *p = Rgb(instance_color(k));
            }
        }
    }
    tile
}

/// Visible pixels filled with a dimmed instance colour; each instance's
/// invisible pixels are striped in its full colour on top, in stack order.
fn occlusion_tile(w: u32, h: u32, masks: &[MaskSet]) -> RgbImage {
    let mut tile = RgbImage::from_pixel(w, h, Rgb(EMPTY));
    for (k, set) in masks.iter().enumerate() {
        let fill = scaled(instance_color(k), 0.55);
        for (x, y, p) in tile.enumerate_pixels_mut() {
            if set.visible.get(x as usize, y as usize) {
                *p = Rgb(fill);
            }
        }
    }
    for (k, set) in masks.iter().enumerate() {
        for (x, y, p) in tile.enumerate_pixels_mut() {
            if set.invisible.get(x as usize, y as usize) && on_hatch(x, y) {
                *p = Rgb(instance_color(k));
            }
        }
    }
    tile
}

fn points_tile(composite: &RgbImage, annotations: &[&AnnotationRecord]) -> RgbImage {
    let mut tile = composite.clone();
    for p in tile.pixels_mut() {
        p.0 = scaled(p.0, 0.5);
    }
    for a in annotations {
        let [bx, by, bw, bh] = a.bbox.map(|v| v as i64);
        for x in bx..bx + bw {
            put(&mut tile, x, by, BOX_COLOR);
            put(&mut tile, x, by + bh - 1, BOX_COLOR);
        }
        for y in by..by + bh {
            put(&mut tile, bx, y, BOX_COLOR);
            put(&mut tile, bx + bw - 1, y, BOX_COLOR);
        }
    }
    for a in annotations {
        for p in &a.points {
            let c = if p.2 == 1 { OBJECT_POINT } else { BACKGROUND_POINT };
            let (cx, cy) = (p.0.floor() as i64, p.1.floor() as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    put(&mut tile, cx + dx, cy + dy, c);
                }
            }
        }
    }
    tile
}

fn valid_range(record: &DatasetRecord) -> String {
    let ids = record.images.iter().map(|i| i.id);
    match (ids.clone().min(), ids.max()) {
        (Some(lo), Some(hi)) => format!("{lo}..={hi} ({} images)", record.images.len()),
        _ => "none (split is empty)".into(),
    }
}

/// Renders the three tiles side by side.
pub fn render_panel(record: &DatasetRecord, composite: &RgbImage, image_id: u64) -> Result<RgbImage> {
    let masks = record.mask_sets(image_id)?;
    let annotations: Vec<&AnnotationRecord> = record.annotations_for(image_id).collect();
    let (w, h) = composite.dimensions();
    let tiles = [
        contour_tile(composite, &masks),
        occlusion_tile(w, h, &masks),
        points_tile(composite, &annotations),
    ];
    let mut panel = RgbImage::from_pixel(3 * w + 2 * GAP, h, Rgb([0, 0, 0]));
    for (i, tile) in tiles.iter().enumerate() {
        image::imageops::replace(&mut panel, tile, (i as u32 * (w + GAP)) as i64, 0);
    }
    Ok(panel)
}

pub(super) fn cmd_inspect(cfg: &ForgeConfig, args: &InspectArgs) -> Result<()> {
    let root = &cfg.dataset.output;
    let record = read_dataset(root, &cfg.dataset.split)?;
    let image = record.image(args.image_id).ok_or_else(|| Error::UnknownImageId {
        id: args.image_id,
        valid: valid_range(&record),
    })?;
    let path = root.join(&image.file_name);
    let composite = image::open(&path).map_err(|e| Error::image(&path, e))?.to_rgb8();
    let panel = render_panel(&record, &composite, args.image_id)?;
    panel.save(&args.out).map_err(|e| Error::image(&args.out, e))?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;

    fn set(amodal: Mask, visible: Mask) -> MaskSet {
        let invisible = amodal.difference(&visible);
        let amodal_bbox = amodal.bounding_box().unwrap();
        MaskSet {
            amodal,
            visible,
            invisible,
            amodal_bbox,
        }
    }

    #[test]
    fn hatch_marks_only_invisible_pixels() {
        let a = Mask::from_fn(12, 12, |x, y| x < 8 && y < 8);
        let b = Mask::from_fn(12, 12, |x, y| x >= 4 && y >= 4);
        let sets = vec![set(a.clone(), a.difference(&b)), set(b.clone(), b.clone())];
        let tile = occlusion_tile(12, 12, &sets);
        let full0 = Rgb(instance_color(0));
        for (x, y, p) in tile.enumerate_pixels() {
            let hidden = sets[0].invisible.get(x as usize, y as usize);
            assert_eq!(*p == full0, hidden && on_hatch(x, y), "pixel ({x}, {y})");
        }
    }

    #[test]
    fn unoccluded_instance_has_no_hatch() {
        let a = Mask::from_fn(10, 10, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        let tile = occlusion_tile(10, 10, &[set(a.clone(), a)]);
        assert!(tile.pixels().all(|p| p.0 != instance_color(0)));
    }
}
