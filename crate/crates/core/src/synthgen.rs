//! Synthetic scenes under a lateral camera pan, with exact instance masks and
//! left/right questions whose answers follow from world coordinates.
//!
//! Frame `j` of `n` views the world through a window whose left edge sits at
//! `pan · j / (n − 1)`, so objects move left as the camera pans right. A
//! pixel `(x, y)` belongs to an object when its center `(x + ½, y + ½)` lies
//! inside the footprint: `[cx − s/2, cx + s/2) × [cy − s/2, cy + s/2)` for a
//! square of side `s`, or the closed disc of diameter `s`. Later objects are
//! drawn over earlier ones. The background is a world-anchored stripe
//! pattern so consecutive frames visibly overlap.

use std::collections::BTreeSet;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, SynthError};
use crate::eval::{QuestionTag, SotBundle, SotQuestion};
use crate::mask_store::{save_frames, save_masks_png, FrameSequence, IdMap, InstanceId, MaskSequence};
use crate::prompt::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Disc,
}

impl Shape {
    fn noun(self) -> &'static str {
        match self {
            Shape::Rect => "square",
            Shape::Disc => "disc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: InstanceId,
    pub shape: Shape,
    /// Side length or diameter in pixels.
    pub size: f64,
    /// Footprint center in world pixels.
    pub world_x: f64,
    pub world_y: f64,
    pub color: [u8; 3],
}

impl ObjectSpec {
    /// Whether the pixel center `(px, py)` in world coordinates is covered.
    pub fn covers(&self, px: f64, py: f64) -> bool {
        let h = self.size / 2.0;
        match self.shape {
            Shape::Rect => {
                px >= self.world_x - h && px < self.world_x + h && py >= self.world_y - h && py < self.world_y + h
            }
            Shape::Disc => {
                let (dx, dy) = (px - self.world_x, py - self.world_y);
                dx * dx + dy * dy <= h * h
            }
        }
    }

    pub fn description(&self) -> String {
        let color = COLOR_NAMES
            .iter()
            .find(|(_, c)| *c == self.color)
            .map(|(n, _)| n.to_string())
            .unwrap_or_else(|| format!("rgb({}, {}, {})", self.color[0], self.color[1], self.color[2]));
        format!("{color} {}", self.shape.noun())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub height: u32,
    pub width: u32,
    pub objects: Vec<ObjectSpec>,
    /// Total horizontal camera travel in pixels; positive pans left to right.
    pub pan: f64,
}

pub const COLOR_NAMES: [(&str, [u8; 3]); 8] = [
    ("red", [220, 40, 40]),
    ("green", [40, 170, 60]),
    ("blue", [40, 80, 220]),
    ("yellow", [235, 210, 40]),
    ("purple", [140, 60, 190]),
    ("orange", [245, 140, 30]),
    ("cyan", [40, 200, 210]),
    ("pink", [240, 120, 180]),
];

const STRIPE_PX: f64 = 24.0;
const BACKGROUND: [[u8; 3]; 2] = [[96, 96, 104], [128, 128, 120]];

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_frames == 0 || self.width == 0 || self.height == 0 {
            return bad("frame count and size must be positive");
        }
        if !self.pan.is_finite() {
            return bad("pan must be finite");
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 {
                return bad("object ids must be at least 1");
            }
            if !ids.insert(o.id) {
                return bad("object ids must be unique");
            }
            if !(o.size > 0.0 && o.size.is_finite() && o.world_x.is_finite() && o.world_y.is_finite()) {
                return bad("object geometry must be finite with positive size");
            }
        }
        Ok(())
    }

    /// Left edge of frame `j`'s window in world coordinates.
    pub fn camera_offset(&self, j: usize) -> f64 {
        if self.n_frames <= 1 {
            0.0
        } else {
            self.pan * j as f64 / (self.n_frames - 1) as f64
        }
    }

    pub fn object(&self, id: InstanceId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// Where a question is asked from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Viewpoint {
    Camera,
    /// A person described in the question; `faces_camera` means they look
    /// back toward the camera, otherwise they look the same way it does.
    Observer {
        faces_camera: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQuestion {
    #[serde(flatten)]
    pub question: SotQuestion,
    /// The question asks where `subject` is relative to `reference`.
    pub subject: InstanceId,
    pub reference: InstanceId,
    pub viewpoint: Viewpoint,
}

#[derive(Debug, Clone)]
pub struct SotScene {
    pub scene_id: String,
    pub spec: SceneSpec,
    pub frames: FrameSequence,
    pub masks: MaskSequence,
    pub questions: Vec<SynthQuestion>,
}

impl SotScene {
    pub fn to_bundle(&self) -> SotBundle {
        SotBundle {
            scene_id: self.scene_id.clone(),
            frames: self.frames.clone(),
            masks: self.masks.clone(),
            questions: self.questions.iter().map(|q| q.question.clone()).collect(),
        }
    }
}

/// Side of `subject` relative to `reference` seen from `viewpoint`.
pub fn side_from_geometry(subject: &ObjectSpec, reference: &ObjectSpec, viewpoint: Viewpoint) -> Side {
    let camera = if subject.world_x < reference.world_x {
        Side::Left
    } else {
        Side::Right
    };
    match viewpoint {
        Viewpoint::Observer { faces_camera: true } => camera.flipped(),
        _ => camera,
    }
}

/// Rasterizes one frame and its mask.
pub fn render_view(spec: &SceneSpec, j: usize) -> (RgbImage, IdMap) {
    let off = spec.camera_offset(j);
    let mut img = RgbImage::new(spec.width, spec.height);
    let mut map = IdMap::filled(spec.width, spec.height, 0);
    for y in 0..spec.height {
        let py = y as f64 + 0.5;
        for x in 0..spec.width {
            let px = x as f64 + 0.5 + off;
            let stripe = (px / STRIPE_PX).floor().rem_euclid(2.0) as usize;
            let mut color = BACKGROUND[stripe];
            let mut id = 0;
            for o in &spec.objects {
                if o.covers(px, py) {
                    color = o.color;
                    id = o.id;
                }
            }
            img.put_pixel(x, y, Rgb(color));
            map.set(x, y, id);
        }
    }
    (img, map)
}

const OBSERVER_TEXT: &str = "Picture the images joined into one panorama in the order they are shown.";
const FACING_TEXT: &str = "Imagine a person standing on the far side of the scene, facing back toward the camera.";
const BEHIND_TEXT: &str = "Imagine a person standing just behind the camera, facing the same direction as the camera.";

fn question_text(subject: &ObjectSpec, reference: &ObjectSpec, viewpoint: Viewpoint) -> String {
    let (s, r) = (subject.description(), reference.description());
    match viewpoint {
        Viewpoint::Camera => format!(
            "{OBSERVER_TEXT} From the camera's point of view, is the {s} to the left or to the right of the {r}?"
        ),
        Viewpoint::Observer { faces_camera } => {
            let setup = if faces_camera { FACING_TEXT } else { BEHIND_TEXT };
            format!("{setup} From that person's point of view, is the {s} to the left or to the right of the {r}?")
        }
    }
}

/// Generates frames, masks and the five questions for `spec`.
///
/// Questions pair an object seen in the first frame but not the last with one
/// seen in the last frame but not the first.
pub fn generate_scene(spec: &SceneSpec, scene_id: &str) -> Result<SotScene, SynthError> {
    spec.validate()?;
    let (frames, maps): (Vec<RgbImage>, Vec<IdMap>) = (0..spec.n_frames).map(|j| render_view(spec, j)).unzip();
    for o in &spec.objects {
        if !maps.iter().any(|m| m.contains(o.id)) {
            return Err(SynthError::InvisibleObject(o.id));
        }
    }
    let first = &maps[0];
    let last = &maps[maps.len() - 1];
    let early: Vec<&ObjectSpec> = spec
        .objects
        .iter()
        .filter(|o| first.contains(o.id) && !last.contains(o.id))
        .collect();
    let late: Vec<&ObjectSpec> = spec
        .objects
        .iter()
        .filter(|o| last.contains(o.id) && !first.contains(o.id))
        .collect();
    if early.is_empty() || late.is_empty() {
        return Err(SynthError::InvalidSpec(
            "needs an object seen only early and one seen only late".into(),
        ));
    }

    // (early index, late index, early object is the subject, viewpoint, tag)
    let layout = [
        (0, 0, true, Viewpoint::Camera, QuestionTag::Observer),
        (1, 1, false, Viewpoint::Camera, QuestionTag::Observer),
        (0, 1, true, Viewpoint::Camera, QuestionTag::Observer),
        (
            1,
            0,
            true,
            Viewpoint::Observer { faces_camera: true },
            QuestionTag::Perspective,
        ),
        (
            0,
            0,
            false,
            Viewpoint::Observer { faces_camera: false },
            QuestionTag::Perspective,
        ),
    ];
    let questions = layout
        .iter()
        .enumerate()
        .map(|(qi, &(ei, li, early_first, viewpoint, tag))| {
            let e = early[ei % early.len()];
            let l = late[li % late.len()];
            let (subject, reference) = if early_first { (e, l) } else { (l, e) };
            SynthQuestion {
                question: SotQuestion {
                    question_id: format!("{scene_id}_q{}", qi + 1),
                    question: question_text(subject, reference, viewpoint),
                    tag: Some(tag),
                    gold: side_from_geometry(subject, reference, viewpoint),
                },
                subject: subject.id,
                reference: reference.id,
                viewpoint,
            }
        })
        .collect();

    Ok(SotScene {
        scene_id: scene_id.to_string(),
        spec: spec.clone(),
        frames: FrameSequence::new(frames).map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
        masks: MaskSequence::new(maps).map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
        questions,
    })
}

/// Gold answer in capture order, from world coordinates.
pub fn oracle_answer(scene: &SotScene, question_id: &str) -> Result<Side, SynthError> {
    let q = scene
        .questions
        .iter()
        .find(|q| q.question.question_id == question_id)
        .ok_or_else(|| SynthError::UnknownQuestion(question_id.to_string()))?;
    let find = |id| {
        scene
            .spec
            .object(id)
            .ok_or_else(|| SynthError::UnknownQuestion(question_id.to_string()))
    };
    Ok(side_from_geometry(find(q.subject)?, find(q.reference)?, q.viewpoint))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Seeded scene layout: two objects seen only in early frames, two only in
/// late frames, and with three or more frames up to three in between, none
/// overlapping. The pan is twice the frame width.
pub fn random_spec(seed: u64, n_frames: usize, width: u32, height: u32) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let pan = 2.0 * w;
    let max_size = (w.min(h) / 4.0).max(3.0).round();
    let min_size = (max_size / 2.0).round().max(2.0);
    let mut colors: Vec<usize> = (0..COLOR_NAMES.len()).collect();
    let mut objects: Vec<ObjectSpec> = Vec::new();
    // Early objects lie fully inside the first window, late ones inside the
    // last; with a pan of 2w neither reaches the opposite end.
    let middle = if n_frames >= 3 { rng.random_range(1..=3) } else { 0 };
    for (lo, hi, count) in [(0.0, w, 2), (pan, pan + w, 2), (w, pan, middle)] {
        let mut placed = 0;
        for _ in 0..1000 {
            if placed == count {
                break;
            }
            let size = uniform(&mut rng, min_size, max_size + 1.0).floor();
            let half = size / 2.0;
            let x = uniform(&mut rng, lo + half + 1.0, hi - half - 1.0).round();
            let y = uniform(&mut rng, half + 1.0, h - half - 1.0).round();
            let shape = if rng.random_bool(0.5) { Shape::Rect } else { Shape::Disc };
            let gap = |o: &ObjectSpec| (o.size + size) / 2.0 + 2.0;
            let clear = objects
                .iter()
                .all(|o| (o.world_x - x).abs() > gap(o) || (o.world_y - y).abs() > gap(o));
            if !clear {
                continue;
            }
            let pick = rng.random_range(0..colors.len());
            let color = COLOR_NAMES[colors.swap_remove(pick)].1;
            objects.push(ObjectSpec {
                id: objects.len() as InstanceId + 1,
                shape,
                size,
                world_x: x,
                world_y: y,
                color,
            });
            placed += 1;
        }
    }
    SceneSpec {
        seed,
        n_frames,
        height,
        width,
        objects,
        pan,
    }
}

/// Input of the `synth` command: explicit specs, seeded random ones, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRequest {
    #[serde(default)]
    pub scenes: Vec<SceneSpec>,
    #[serde(default)]
    pub random: Option<RandomScenes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomScenes {
    pub seed: u64,
    pub count: usize,
    #[serde(default = "default_frames")]
    pub n_frames: usize,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_frames() -> usize {
    16
}
fn default_width() -> u32 {
    160
}
fn default_height() -> u32 {
    120
}

impl SynthRequest {
    pub fn specs(&self) -> Vec<SceneSpec> {
        let mut specs = self.scenes.clone();
        if let Some(r) = &self.random {
            specs.extend(
                (0..r.count as u64).map(|i| random_spec(r.seed.wrapping_add(i), r.n_frames, r.width, r.height)),
            );
        }
        specs
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:03}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `frames/`, `masks/`, `questions.json` and `scene.json` into `dir`.
pub fn write_bundle(dir: &Path, scene: &SotScene) -> Result<(), Error> {
    save_frames(&dir.join("frames"), &scene.frames)?;
    save_masks_png(&dir.join("masks"), &scene.masks)?;
    write_json(&dir.join("questions.json"), &scene.questions)?;
    write_json(&dir.join("scene.json"), &scene.spec)
}

/// Generates `specs` in parallel and writes one bundle per scene under `out`.
pub fn write_scenes(out: &Path, specs: &[SceneSpec]) -> Result<Vec<SotScene>, Error> {
    use rayon::prelude::*;
    let scenes: Vec<SotScene> = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| generate_scene(s, &scene_id(i)))
        .collect::<Result<_, _>>()?;
    for s in &scenes {
        write_bundle(&out.join(&s.scene_id), s)?;
    }
    Ok(scenes)
}
