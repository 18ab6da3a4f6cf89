//! Frame and instance-mask storage: loading, validation, and the run-length
//! interchange format for multi-instance ID maps.
//!
//! On-disk layout: frames and indexed-png masks live in separate directories
//! with identical file stems (`frame_000000.png`, `frame_000001.png`, ...).
//! Masks are 16-bit grayscale where the pixel value is the instance ID and
//! `0` is background. The rle-json format stores a whole sequence in one
//! document: `{"height": H, "width": W, "frames": [[[id, run], ...], ...]}`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::MaskError;

pub type InstanceId = u16;

/// Cells with this value belong to no instance.
pub const BACKGROUND: InstanceId = 0;

/// Name of the `index`-th frame (and its mask) on disk.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Row-major H×W grid of instance IDs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    width: u32,
    height: u32,
    cells: Vec<InstanceId>,
}

impl IdMap {
    pub fn new(width: u32, height: u32, cells: Vec<InstanceId>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyGrid);
        }
        let expected = width as u64 * height as u64;
        if cells.len() as u64 != expected {
            return Err(MaskError::CorruptRle {
                covered: cells.len() as u64,
                expected,
            });
        }
        Ok(Self { width, height, cells })
    }

    pub fn filled(width: u32, height: u32, id: InstanceId) -> Self {
        assert!(width > 0 && height > 0, "IdMap dimensions must be non-zero");
        Self {
            width,
            height,
            cells: vec![id; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> InstanceId) -> Self {
        assert!(width > 0 && height > 0, "IdMap dimensions must be non-zero");
        let mut cells = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(x, y));
            }
        }
        Self { width, height, cells }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cells(&self) -> &[InstanceId] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> InstanceId {
        self.cells[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, id: InstanceId) {
        let w = self.width as usize;
        self.cells[y as usize * w + x as usize] = id;
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.cells.contains(&id)
    }

    /// Nearest-neighbour upscaling by an integer factor in both axes.
    pub fn upscale(&self, factor: u32) -> IdMap {
        assert!(factor >= 1);
        IdMap::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
    }
}

/// Ordered frames sharing a single resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>) -> Result<Self, MaskError> {
        let first = frames.first().ok_or(MaskError::EmptyGrid)?;
        let (w, h) = first.dimensions();
        for (i, f) in frames.iter().enumerate() {
            if f.dimensions() != (w, h) {
                return Err(MaskError::DimensionMismatch {
                    file: frame_file_name(i),
                    expected_w: w,
                    expected_h: h,
                    found_w: f.width(),
                    found_h: f.height(),
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn get(&self, index: usize) -> Option<&RgbImage> {
        self.frames.get(index)
    }

    pub fn reversed(&self) -> Self {
        Self {
            frames: self.frames.iter().rev().cloned().collect(),
        }
    }
}

/// Per-frame instance-ID maps aligned with a [`FrameSequence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    masks: Vec<IdMap>,
}

impl MaskSequence {
    pub fn new(masks: Vec<IdMap>) -> Result<Self, MaskError> {
        let first = masks.first().ok_or(MaskError::EmptyGrid)?;
        let (w, h) = (first.width, first.height);
        for (i, m) in masks.iter().enumerate() {
            if (m.width, m.height) != (w, h) {
                return Err(MaskError::DimensionMismatch {
                    file: frame_file_name(i),
                    expected_w: w,
                    expected_h: h,
                    found_w: m.width,
                    found_h: m.height,
                });
            }
        }
        Ok(Self { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.masks[0].width
    }

    pub fn height(&self) -> u32 {
        self.masks[0].height
    }

    pub fn masks(&self) -> &[IdMap] {
        &self.masks
    }

    pub fn get(&self, index: usize) -> Option<&IdMap> {
        self.masks.get(index)
    }

    pub fn reversed(&self) -> Self {
        Self {
            masks: self.masks.iter().rev().cloned().collect(),
        }
    }

    /// Fails unless `frames` has the same count and resolution.
    pub fn check_aligned(&self, frames: &FrameSequence) -> Result<(), MaskError> {
        if frames.len() != self.len() {
            return Err(MaskError::FrameCountMismatch {
                frames: frames.len(),
                masks: self.len(),
            });
        }
        if (frames.width(), frames.height()) != (self.width(), self.height()) {
            return Err(MaskError::DimensionMismatch {
                file: "masks".into(),
                expected_w: frames.width(),
                expected_h: frames.height(),
                found_w: self.width(),
                found_h: self.height(),
            });
        }
        Ok(())
    }
}

/// Ascending, duplicate-free instance IDs over every mask, background excluded.
pub fn instance_ids(masks: &MaskSequence) -> Vec<InstanceId> {
    let mut seen = vec![false; InstanceId::MAX as usize + 1];
    for m in &masks.masks {
        for &c in &m.cells {
            seen[c as usize] = true;
        }
    }
    seen.iter()
        .enumerate()
        .skip(1)
        .filter_map(|(id, &hit)| hit.then_some(id as InstanceId))
        .collect()
}

// ── RLE ─────────────────────────────────────────────────────────────────────

/// Row-major `(id, run_length)` encoding of one [`IdMap`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<(InstanceId, u32)>,
}

impl RleMask {
    /// Merges adjacent runs with equal ids and drops empty runs.
    pub fn canonicalize(&self) -> RleMask {
        let mut counts: Vec<(InstanceId, u32)> = Vec::with_capacity(self.counts.len());
        for &(id, run) in &self.counts {
            if run == 0 {
                continue;
            }
            match counts.last_mut() {
                Some((last, len)) if *last == id => *len += run,
                _ => counts.push((id, run)),
            }
        }
        RleMask {
            height: self.height,
            width: self.width,
            counts,
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.counts.iter().all(|&(_, r)| r > 0) && self.counts.windows(2).all(|w| w[0].0 != w[1].0)
    }
}

pub fn encode_rle(map: &IdMap) -> RleMask {
    let mut counts: Vec<(InstanceId, u32)> = Vec::new();
    for &c in &map.cells {
        match counts.last_mut() {
            Some((id, run)) if *id == c => *run += 1,
            _ => counts.push((c, 1)),
        }
    }
    RleMask {
        height: map.height,
        width: map.width,
        counts,
    }
}

pub fn decode_rle(rle: &RleMask) -> Result<IdMap, MaskError> {
    if rle.width == 0 || rle.height == 0 {
        return Err(MaskError::EmptyGrid);
    }
    let expected = rle.width as u64 * rle.height as u64;
    let covered: u64 = rle.counts.iter().map(|&(_, r)| r as u64).sum();
    if covered != expected {
        return Err(MaskError::CorruptRle { covered, expected });
    }
    let mut cells = Vec::with_capacity(expected as usize);
    for &(id, run) in &rle.counts {
        cells.extend(std::iter::repeat_n(id, run as usize));
    }
    IdMap::new(rle.width, rle.height, cells)
}

/// The rle-json sequence document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleSequence {
    pub height: u32,
    pub width: u32,
    pub frames: Vec<Vec<(InstanceId, u32)>>,
}

impl RleSequence {
    pub fn from_masks(masks: &MaskSequence) -> Self {
        Self {
            height: masks.height(),
            width: masks.width(),
            frames: masks.masks.iter().map(|m| encode_rle(m).counts).collect(),
        }
    }

    pub fn decode(&self) -> Result<MaskSequence, MaskError> {
        let maps = self
            .frames
            .iter()
            .map(|counts| {
                decode_rle(&RleMask {
                    height: self.height,
                    width: self.width,
                    counts: counts.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if maps.is_empty() {
            return Err(MaskError::EmptyGrid);
        }
        MaskSequence::new(maps)
    }
}

// ── Mark overrides ──────────────────────────────────────────────────────────

/// Hand-placed marks that replace computed placements for listed frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkOverrideFile {
    pub frames: Vec<OverrideFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideFrame {
    /// Source frame index (position in the full sequence, not the retained one).
    pub index: usize,
    pub marks: Vec<OverrideMark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideMark {
    pub id: InstanceId,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl MarkOverrideFile {
    pub fn validate(&self, frame_count: usize, width: u32, height: u32) -> Result<(), MaskError> {
        for f in &self.frames {
            for m in &f.marks {
                let inside =
                    f.index < frame_count && m.x >= 0.0 && m.y >= 0.0 && m.x < width as f64 && m.y < height as f64;
                if !inside {
                    return Err(MaskError::OverrideOutOfBounds {
                        frame: f.index,
                        x: m.x,
                        y: m.y,
                        width,
                        height,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MaskError> {
        read_json(path)
    }
}

// ── File IO ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskFormat {
    IndexedPng,
    RleJson,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, MaskError> {
    let text = fs::read_to_string(path).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| MaskError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// `frame_*.png` entries of `dir` in lexicographic order.
fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>, MaskError> {
    if !dir.is_dir() {
        return Err(MaskError::MissingPath(dir.to_path_buf()));
    }
    let io_err = |source| MaskError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let is_frame = name
            .strip_prefix("frame_")
            .and_then(|rest| rest.strip_suffix(".png"))
            .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()));
        if is_frame {
            files.push(entry.path());
        }
    }
    if files.is_empty() {
        return Err(MaskError::EmptySequence(dir.to_path_buf()));
    }
    files.sort();
    Ok(files)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn decode_image(path: &Path) -> Result<DynamicImage, MaskError> {
    let image_err = |source| MaskError::Image {
        file: file_label(path),
        source,
    };
    ImageReader::open(path)
        .map_err(|source| MaskError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| MaskError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(image_err)
}

/// Loads `frame_*.png` from a directory. 8-bit gray, RGB and RGBA inputs are
/// accepted (converted to RGB); anything else is rejected.
pub fn load_frames(dir: &Path) -> Result<FrameSequence, MaskError> {
    let files = list_frame_files(dir)?;
    let mut frames = Vec::with_capacity(files.len());
    let mut dims: Option<(u32, u32)> = None;
    for path in &files {
        let img = decode_image(path)?;
        let rgb = match img {
            DynamicImage::ImageRgb8(rgb) => rgb,
            DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) => img.to_rgb8(),
            other => {
                return Err(MaskError::UnsupportedPixelFormat {
                    file: file_label(path),
                    format: format!("{:?}", other.color()),
                })
            }
        };
        check_dims(&mut dims, path, rgb.width(), rgb.height())?;
        frames.push(rgb);
    }
    FrameSequence::new(frames)
}

fn check_dims(dims: &mut Option<(u32, u32)>, path: &Path, w: u32, h: u32) -> Result<(), MaskError> {
    match *dims {
        None => *dims = Some((w, h)),
        Some((ew, eh)) if (ew, eh) != (w, h) => {
            return Err(MaskError::DimensionMismatch {
                file: file_label(path),
                expected_w: ew,
                expected_h: eh,
                found_w: w,
                found_h: h,
            })
        }
        Some(_) => {}
    }
    Ok(())
}

/// Loads a mask sequence; when `frames` is given, count and resolution must match.
pub fn load_masks(path: &Path, format: MaskFormat, frames: Option<&FrameSequence>) -> Result<MaskSequence, MaskError> {
    let masks = match format {
        MaskFormat::IndexedPng => load_png_masks(path)?,
        MaskFormat::RleJson => {
            if !path.exists() {
                return Err(MaskError::MissingPath(path.to_path_buf()));
            }
            read_json::<RleSequence>(path)?.decode()?
        }
    };
    if let Some(frames) = frames {
        masks.check_aligned(frames)?;
    }
    Ok(masks)
}

fn load_png_masks(dir: &Path) -> Result<MaskSequence, MaskError> {
    let files = list_frame_files(dir)?;
    let mut maps = Vec::with_capacity(files.len());
    let mut dims = None;
    for path in &files {
        let img = decode_image(path)?;
        let (w, h) = (img.width(), img.height());
        check_dims(&mut dims, path, w, h)?;
        let cells: Vec<u16> = match img {
            DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
            other => {
                return Err(MaskError::UnsupportedPixelFormat {
                    file: file_label(path),
                    format: format!("{:?}", other.color()),
                })
            }
        };
        maps.push(IdMap::new(w, h, cells)?);
    }
    MaskSequence::new(maps)
}

fn ensure_dir(dir: &Path) -> Result<(), MaskError> {
    fs::create_dir_all(dir).map_err(|source| MaskError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn save_frames(dir: &Path, frames: &FrameSequence) -> Result<(), MaskError> {
    ensure_dir(dir)?;
    for (i, f) in frames.frames.iter().enumerate() {
        let name = frame_file_name(i);
        f.save(dir.join(&name))
            .map_err(|source| MaskError::Image { file: name, source })?;
    }
    Ok(())
}

/// Writes one 16-bit grayscale PNG per mask.
pub fn save_masks_png(dir: &Path, masks: &MaskSequence) -> Result<(), MaskError> {
    ensure_dir(dir)?;
    for (i, m) in masks.masks.iter().enumerate() {
        let name = frame_file_name(i);
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(m.width, m.height, m.cells.clone()).expect("cell count matches dimensions");
        buf.save(dir.join(&name))
            .map_err(|source| MaskError::Image { file: name, source })?;
    }
    Ok(())
}

pub fn save_masks_rle(path: &Path, masks: &MaskSequence) -> Result<(), MaskError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let doc = serde_json::to_string(&RleSequence::from_masks(masks)).expect("serializable");
    fs::write(path, doc).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn grid(w: u32, h: u32, cells: &[u16]) -> IdMap {
        IdMap::new(w, h, cells.to_vec()).unwrap()
    }

    #[test]
    fn rle_uniform_grid() {
        let rle = encode_rle(&IdMap::filled(2, 2, 7));
        assert_eq!(rle.counts, vec![(7, 4)]);
    }

    #[test]
    fn rle_single_row() {
        let rle = encode_rle(&grid(4, 1, &[0, 0, 1, 1]));
        assert_eq!(rle.counts, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn rle_short_runs_are_corrupt() {
        let rle = RleMask {
            height: 2,
            width: 2,
            counts: vec![(0, 3)],
        };
        assert!(matches!(
            decode_rle(&rle),
            Err(MaskError::CorruptRle {
                covered: 3,
                expected: 4
            })
        ));
        let over = RleMask {
            height: 2,
            width: 2,
            counts: vec![(0, 3), (1, 2)],
        };
        assert!(matches!(decode_rle(&over), Err(MaskError::CorruptRle { .. })));
    }

    #[test]
    fn canonicalize_merges_and_drops() {
        let rle = RleMask {
            height: 1,
            width: 6,
            counts: vec![(3, 2), (3, 1), (0, 0), (4, 3)],
        };
        let c = rle.canonicalize();
        assert_eq!(c.counts, vec![(3, 3), (4, 3)]);
        assert!(c.is_canonical());
        assert_eq!(encode_rle(&decode_rle(&rle).unwrap()), c);
    }

    #[test]
    fn instance_ids_excludes_background() {
        let seq = MaskSequence::new(vec![grid(3, 1, &[0, 3, 5]), grid(3, 1, &[5, 0, 0])]).unwrap();
        assert_eq!(instance_ids(&seq), vec![3, 5]);
        let empty = MaskSequence::new(vec![IdMap::filled(4, 4, 0)]).unwrap();
        assert!(instance_ids(&empty).is_empty());
    }

    #[test]
    fn override_bounds() {
        let ok = MarkOverrideFile {
            frames: vec![OverrideFrame {
                index: 1,
                marks: vec![OverrideMark {
                    id: 2,
                    x: 9.5,
                    y: 0.0,
                    label: None,
                }],
            }],
        };
        assert!(ok.validate(2, 10, 10).is_ok());
        assert!(ok.validate(1, 10, 10).is_err());
        assert!(ok.validate(2, 9, 10).is_err());
    }

    #[test]
    fn override_json_shape() {
        let doc = r#"{"frames":[{"index":0,"marks":[{"id":4,"x":1.5,"y":2,"label":"A"}]}]}"#;
        let parsed: MarkOverrideFile = serde_json::from_str(doc).unwrap();
        assert_eq!(parsed.frames[0].marks[0].label.as_deref(), Some("A"));
        assert_eq!(parsed.frames[0].marks[0].y, 2.0);
    }

    #[test]
    fn load_frames_in_order_and_rejects_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3u8 {
            let img = RgbImage::from_pixel(640, 480, Rgb([i, 0, 0]));
            img.save(dir.path().join(frame_file_name(i as usize))).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let seq = load_frames(dir.path()).unwrap();
        assert_eq!((seq.len(), seq.width(), seq.height()), (3, 640, 480));
        assert_eq!(seq.get(2).unwrap().get_pixel(0, 0), &Rgb([2, 0, 0]));

        RgbImage::new(320, 240)
            .save(dir.path().join(frame_file_name(3)))
            .unwrap();
        match load_frames(dir.path()) {
            Err(MaskError::DimensionMismatch { file, .. }) => assert_eq!(file, "frame_000003.png"),
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_frames_empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_frames(dir.path()), Err(MaskError::EmptySequence(_))));
        assert!(matches!(
            load_frames(&dir.path().join("nope")),
            Err(MaskError::MissingPath(_))
        ));
    }

    #[test]
    fn sixteen_bit_frames_are_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(4, 4);
        img.save(dir.path().join(frame_file_name(0))).unwrap();
        assert!(matches!(
            load_frames(dir.path()),
            Err(MaskError::UnsupportedPixelFormat { .. })
        ));
    }

    #[test]
    fn png_masks_preserve_wide_ids_and_check_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let maps: Vec<IdMap> = (0..3)
            .map(|i| {
                IdMap::from_fn(640, 480, |x, _| {
                    if x < 10 {
                        0
                    } else if x < 20 {
                        1
                    } else {
                        2 + 60000 * (i % 2)
                    }
                })
            })
            .collect();
        let seq = MaskSequence::new(maps).unwrap();
        save_masks_png(dir.path(), &seq).unwrap();
        let loaded = load_masks(dir.path(), MaskFormat::IndexedPng, None).unwrap();
        assert_eq!(loaded, seq);
        assert_eq!(instance_ids(&loaded), vec![1, 2, 60002]);

        let frames = FrameSequence::new(vec![RgbImage::new(640, 480); 2]).unwrap();
        assert!(matches!(
            load_masks(dir.path(), MaskFormat::IndexedPng, Some(&frames)),
            Err(MaskError::FrameCountMismatch { frames: 2, masks: 3 })
        ));
    }

    #[test]
    fn rle_json_file_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let seq = MaskSequence::new(vec![grid(2, 2, &[0, 1, 1, 2]), grid(2, 2, &[2, 2, 2, 2])]).unwrap();
        let path = dir.path().join("masks.json");
        save_masks_rle(&path, &seq).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, r#"{"height":2,"width":2,"frames":[[[0,1],[1,2],[2,1]],[[2,4]]]}"#);
        assert_eq!(load_masks(&path, MaskFormat::RleJson, None).unwrap(), seq);

        std::fs::write(&path, r#"{"height":2,"width":2,"frames":[[[0,3]]]}"#).unwrap();
        assert!(matches!(
            load_masks(&path, MaskFormat::RleJson, None),
            Err(MaskError::CorruptRle { .. })
        ));
    }

    fn arb_grid(max: u32, ids: u16) -> impl Strategy<Value = IdMap> {
        (1..=max, 1..=max).prop_flat_map(move |(w, h)| {
            proptest::collection::vec(0..ids, (w * h) as usize).prop_map(move |cells| IdMap::new(w, h, cells).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rle_roundtrip_is_identity(g in arb_grid(8, 4)) {
            let rle = encode_rle(&g);
            prop_assert!(rle.is_canonical());
            let back = decode_rle(&rle).unwrap();
            for y in 0..g.height() {
                for x in 0..g.width() {
                    prop_assert_eq!(back.get(x, y), g.get(x, y));
                }
            }
        }

        #[test]
        fn encode_of_decode_is_canonical_form(
            runs in proptest::collection::vec((0u16..3, 0u32..5), 1..12)
        ) {
            let total: u32 = runs.iter().map(|r| r.1).sum();
            prop_assume!(total > 0);
            let rle = RleMask { height: 1, width: total, counts: runs };
            prop_assert_eq!(encode_rle(&decode_rle(&rle).unwrap()), rle.canonicalize());
        }

        #[test]
        fn instance_ids_matches_set_union(g in arb_grid(12, 30), h in arb_grid(12, 30)) {
            let h = IdMap::from_fn(g.width(), g.height(), |x, y| h.get(x % h.width(), y % h.height()));
            let seq = MaskSequence::new(vec![g.clone(), h.clone()]).unwrap();
            let mut brute = BTreeSet::new();
            for m in [&g, &h] {
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        if m.get(x, y) != 0 { brute.insert(m.get(x, y)); }
                    }
                }
            }
            prop_assert_eq!(instance_ids(&seq), brute.into_iter().collect::<Vec<_>>());
        }
    }

    #[test]
    fn png_then_rle_roundtrip_on_random_maps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(16);
        let maps: Vec<IdMap> = (0..4)
            .map(|_| IdMap::from_fn(16, 16, |_, _| rng.random_range(0..6)))
            .collect();
        let seq = MaskSequence::new(maps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_masks_png(dir.path(), &seq).unwrap();
        let loaded = load_masks(dir.path(), MaskFormat::IndexedPng, None).unwrap();
        for m in loaded.masks() {
            let back = decode_rle(&encode_rle(m)).unwrap();
            assert_eq!(back.cells(), m.cells());
        }
        assert_eq!(loaded, seq);
    }
}
