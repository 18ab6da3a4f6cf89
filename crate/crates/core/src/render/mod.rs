//! Mark rendering.
//!
//! Rendering is split in two: [`layout_frame`] turns placements into a list of
//! drawable elements (the per-frame manifest) and [`apply_elements`] paints a
//! manifest onto a source frame. Both are pure, so re-applying a stored
//! manifest to the source reproduces the rendered bytes.
//!
//! Paint order: mask fills, then outlines, then each marker disc followed by
//! its label. Within a layer, higher ranks are painted first so the top
//! tracklet ends up on top.

mod font;
mod outline;
mod style;

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb as Pixel, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use font::{fit_scale, text_size};
pub use outline::{boundary_mask, trace_outline, Polyline};
pub use style::{color_for, MarkStyle, MarkTier, Rgb, DEFAULT_DIAMETER_PX, DEFAULT_PALETTE, MIN_DIAMETER_PX};

use crate::correspondence::{MarkPlacement, PromptPlan};
use crate::error::RenderError;
use crate::mask_store::{FrameSequence, IdMap, InstanceId, MaskSequence};

pub const LABEL_COLOR: Rgb = [255, 255, 255];

/// Row-major `[start, length]` pixel runs.
pub type PixelRuns = Vec<[u32; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Element {
    Fill {
        instance_id: InstanceId,
        rank: usize,
        color: Rgb,
        alpha: f64,
        runs: PixelRuns,
    },
    Outline {
        instance_id: InstanceId,
        rank: usize,
        color: Rgb,
        thickness_px: u32,
        polylines: Vec<Polyline>,
        runs: PixelRuns,
    },
    Marker {
        instance_id: InstanceId,
        rank: usize,
        color: Rgb,
        center: [f64; 2],
        diameter_px: u32,
        label: String,
        glyph_scale: u32,
    },
}

impl Element {
    pub fn kind(&self) -> &'static str {
        match self {
            Element::Fill { .. } => "fill",
            Element::Outline { .. } => "outline",
            Element::Marker { .. } => "marker",
        }
    }

    pub fn instance_id(&self) -> InstanceId {
        match self {
            Element::Fill { instance_id, .. }
            | Element::Outline { instance_id, .. }
            | Element::Marker { instance_id, .. } => *instance_id,
        }
    }

    pub fn color(&self) -> Rgb {
        match self {
            Element::Fill { color, .. } | Element::Outline { color, .. } | Element::Marker { color, .. } => *color,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub frame_index: usize,
    pub elements: Vec<Element>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub image: RgbImage,
    pub manifest: FrameManifest,
}

impl AnnotatedFrame {
    pub fn frame_index(&self) -> usize {
        self.manifest.frame_index
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(&self.image)
    }
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn runs_from_mask(mask: &[bool]) -> PixelRuns {
    let mut runs: PixelRuns = Vec::new();
    for (i, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        let i = i as u32;
        match runs.last_mut() {
            Some([start, len]) if *start + *len == i => *len += 1,
            _ => runs.push([i, 1]),
        }
    }
    runs
}

/// Member cells within `thickness - 1` (Chebyshev) of a boundary cell.
fn outline_mask(map: &IdMap, id: InstanceId, thickness: u32) -> Vec<bool> {
    let boundary = boundary_mask(map, id);
    if thickness <= 1 {
        return boundary;
    }
    let (w, h) = (map.width() as i64, map.height() as i64);
    let r = thickness as i64 - 1;
    let mut out = boundary.clone();
    for (i, _) in boundary.iter().enumerate().filter(|(_, &b)| b) {
        let (bx, by) = (i as i64 % w, i as i64 / w);
        for y in (by - r).max(0)..=(by + r).min(h - 1) {
            for x in (bx - r).max(0)..=(bx + r).min(w - 1) {
                if map.get(x as u32, y as u32) == id {
                    out[(y * w + x) as usize] = true;
                }
            }
        }
    }
    out
}

/// Computes the drawable elements for one frame. Fills and outlines are only
/// produced for instances present in `map`; override marks for absent IDs get
/// a marker alone.
pub fn layout_frame(
    width: u32,
    height: u32,
    map: &IdMap,
    placements: &[MarkPlacement],
    style: &MarkStyle,
) -> Result<Vec<Element>, RenderError> {
    style.validate()?;
    for p in placements {
        let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64;
        if !inside || !p.x.is_finite() || !p.y.is_finite() {
            return Err(RenderError::PlacementOutOfBounds {
                id: p.instance_id,
                x: p.x,
                y: p.y,
                width,
                height,
            });
        }
    }

    let mut order: Vec<&MarkPlacement> = placements.iter().collect();
    // stable: equal ranks keep input order
    order.sort_by_key(|p| std::cmp::Reverse(p.rank));

    let mut shaded: Vec<(InstanceId, usize)> = Vec::new();
    for p in &order {
        if !shaded.iter().any(|&(id, _)| id == p.instance_id) && map.contains(p.instance_id) {
            shaded.push((p.instance_id, p.rank));
        }
    }

    let mut elements = Vec::new();
    if style.tier.draws_fill() {
        for &(id, rank) in &shaded {
            let member: Vec<bool> = map.cells().iter().map(|&c| c == id).collect();
            elements.push(Element::Fill {
                instance_id: id,
                rank,
                color: color_for(rank, &style.palette),
                alpha: style.mask_alpha,
                runs: runs_from_mask(&member),
            });
        }
    }
    if style.tier.draws_outline() {
        for &(id, rank) in &shaded {
            elements.push(Element::Outline {
                instance_id: id,
                rank,
                color: color_for(rank, &style.palette),
                thickness_px: style.outline_thickness_px,
                polylines: trace_outline(map, id)?,
                runs: runs_from_mask(&outline_mask(map, id, style.outline_thickness_px)),
            });
        }
    }
    for p in &order {
        elements.push(Element::Marker {
            instance_id: p.instance_id,
            rank: p.rank,
            color: color_for(p.rank, &style.palette),
            center: [p.x, p.y],
            diameter_px: style.diameter_px,
            glyph_scale: fit_scale(&p.label, style.diameter_px, style.label_scale),
            label: p.label.clone(),
        });
    }
    Ok(elements)
}

fn for_each_run_pixel(runs: &[[u32; 2]], width: u32, mut f: impl FnMut(u32, u32)) {
    for &[start, len] in runs {
        for i in start..start + len {
            f(i % width, i / width);
        }
    }
}

/// Pixels of a filled disc of `diameter` centred at `center`, clipped.
pub fn disc_pixels(center: [f64; 2], diameter: u32, width: u32, height: u32) -> Vec<(u32, u32)> {
    let r = diameter as f64 / 2.0;
    let r2 = r * r;
    let [cx, cy] = center;
    let x0 = (cx - r).floor().max(0.0) as u32;
    let y0 = (cy - r).floor().max(0.0) as u32;
    let x1 = ((cx + r).ceil() as i64).min(width as i64 - 1);
    let y1 = ((cy + r).ceil() as i64).min(height as i64 - 1);
    let mut out = Vec::new();
    if x1 < 0 || y1 < 0 {
        return out;
    }
    for y in y0..=y1 as u32 {
        let dy = y as f64 - cy;
        for x in x0..=x1 as u32 {
            let dx = x as f64 - cx;
            if dx * dx + dy * dy <= r2 {
                out.push((x, y));
            }
        }
    }
    out
}

/// Paints `elements` in order onto a copy of `source`.
pub fn apply_elements(source: &RgbImage, elements: &[Element]) -> RgbImage {
    let mut img = source.clone();
    let (w, h) = img.dimensions();
    for el in elements {
        match el {
            Element::Fill { color, alpha, runs, .. } => {
                let a = (alpha * 256.0).round() as u32;
                for_each_run_pixel(runs, w, |x, y| {
                    let px = img.get_pixel_mut(x, y);
                    for (dst, &src) in px.0.iter_mut().zip(color) {
                        let v = (*dst as u32 * (256 - a) + src as u32 * a + 128) >> 8;
                        *dst = v.min(255) as u8;
                    }
                });
            }
            Element::Outline { color, runs, .. } => {
                for_each_run_pixel(runs, w, |x, y| img.put_pixel(x, y, Pixel(*color)));
            }
            Element::Marker {
                color,
                center,
                diameter_px,
                label,
                glyph_scale,
                ..
            } => {
                for (x, y) in disc_pixels(*center, *diameter_px, w, h) {
                    img.put_pixel(x, y, Pixel(*color));
                }
                let (tw, th) = text_size(label, *glyph_scale);
                let left = center[0].round() as i64 - tw as i64 / 2;
                let top = center[1].round() as i64 - th as i64 / 2;
                font::for_each_text_pixel(label, *glyph_scale, left, top, |x, y| {
                    if x >= 0 && y >= 0 && x < w as i64 && y < h as i64 {
                        img.put_pixel(x as u32, y as u32, Pixel(LABEL_COLOR));
                    }
                });
            }
        }
    }
    img
}

pub fn render_frame(
    frame_index: usize,
    frame: &RgbImage,
    map: &IdMap,
    placements: &[MarkPlacement],
    style: &MarkStyle,
) -> Result<AnnotatedFrame, RenderError> {
    let (w, h) = frame.dimensions();
    let elements = layout_frame(w, h, map, placements, style)?;
    Ok(AnnotatedFrame {
        image: apply_elements(frame, &elements),
        manifest: FrameManifest { frame_index, elements },
    })
}

/// One annotated frame per retained index, in plan order, on the global
/// rayon pool.
pub fn render_sequence(
    frames: &FrameSequence,
    masks: &MaskSequence,
    plan: &PromptPlan,
) -> Result<Vec<AnnotatedFrame>, RenderError> {
    plan.sparsify
        .indices
        .par_iter()
        .map(|&i| render_one(frames, masks, plan, i))
        .collect()
}

/// [`render_sequence`] on a dedicated pool of `threads` workers.
pub fn render_sequence_with_threads(
    frames: &FrameSequence,
    masks: &MaskSequence,
    plan: &PromptPlan,
    threads: usize,
) -> Result<Vec<AnnotatedFrame>, RenderError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| RenderError::ThreadPool(e.to_string()))?;
    pool.install(|| render_sequence(frames, masks, plan))
}

fn render_one(
    frames: &FrameSequence,
    masks: &MaskSequence,
    plan: &PromptPlan,
    index: usize,
) -> Result<AnnotatedFrame, RenderError> {
    let frame = frames.get(index).ok_or(RenderError::MissingFrame(index))?;
    let map = masks.get(index).ok_or(RenderError::MissingFrame(index))?;
    let placements: Vec<MarkPlacement> = plan.placements_for(index).cloned().collect();
    render_frame(index, frame, map, &placements, &plan.style)
}

pub fn marked_file_name(frame_index: usize) -> String {
    format!("marked_{frame_index:06}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_index: usize,
    pub file: String,
    pub elements: Vec<Element>,
}

/// Contents of `manifest.json` written next to the marked frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub config_hash: String,
    pub plan: PromptPlan,
    pub frames: Vec<ManifestFrame>,
}

/// Writes `marked_<index>.png` files and `manifest.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    annotated: &[AnnotatedFrame],
    plan: &PromptPlan,
    config_hash: &str,
) -> Result<OutputManifest, crate::Error> {
    fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(annotated.len());
    for a in annotated {
        let file = marked_file_name(a.frame_index());
        let bytes = a.png_bytes()?;
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| crate::Error::io(&path, e))?;
        frames.push(ManifestFrame {
            frame_index: a.frame_index(),
            file,
            elements: a.manifest.elements.clone(),
        });
    }
    let manifest = OutputManifest {
        config_hash: config_hash.to_string(),
        plan: plan.clone(),
        frames,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| crate::Error::io(&path, e))?;
    Ok(manifest)
}
