//! Frame sparsification, per-instance Freq/Area statistics, top-k tracklet
//! selection and centroid mark placement.
//!
//! The ordering used for selection is a total order: frequency descending,
//! then area descending, then instance ID ascending.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::mask_store::{FrameSequence, IdMap, InstanceId, MarkOverrideFile, MaskSequence, BACKGROUND};
use crate::render::MarkStyle;

/// Marks per frame used when nothing else is configured.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsifyPlan {
    pub source_count: usize,
    /// Strictly increasing source-frame indices.
    pub indices: Vec<usize>,
}

impl SparsifyPlan {
    pub fn target_count(&self) -> usize {
        self.indices.len()
    }

    /// The same retained frames addressed in a reversed sequence, in
    /// presentation order: index `i` becomes `n - 1 - i`.
    pub fn mirrored(&self) -> SparsifyPlan {
        let n = self.source_count;
        SparsifyPlan {
            source_count: n,
            indices: self.indices.iter().rev().map(|&i| n - 1 - i).collect(),
        }
    }
}

/// Uniformly samples `m` of `n` frames: `round(i * (n-1) / (m-1))`, halves
/// rounded up, so both endpoints are kept whenever `m >= 2`.
pub fn sparsify_indices(n: usize, m: usize) -> Result<SparsifyPlan, PlanError> {
    if m < 1 || m > n {
        return Err(PlanError::InvalidCount { n, m });
    }
    let indices = if m == 1 {
        vec![0]
    } else {
        let (span, steps) = ((n - 1) as u128, (m - 1) as u128);
        (0..m as u128)
            .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
            .collect()
    };
    Ok(SparsifyPlan {
        source_count: n,
        indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceStats {
    pub id: InstanceId,
    /// Retained frames containing the instance.
    pub freq: u32,
    /// Total pixel count over the retained frames.
    pub area: u64,
}

/// Freq/Area for every non-background ID present in the retained masks,
/// ascending by ID.
pub fn instance_stats(masks: &MaskSequence, plan: &SparsifyPlan) -> Vec<InstanceStats> {
    let mut area = vec![0u64; InstanceId::MAX as usize + 1];
    let mut freq = vec![0u32; InstanceId::MAX as usize + 1];
    let mut in_frame = vec![false; InstanceId::MAX as usize + 1];
    let mut touched: Vec<InstanceId> = Vec::new();
    for &idx in &plan.indices {
        let Some(map) = masks.get(idx) else { continue };
        touched.clear();
        for &c in map.cells() {
            if c == BACKGROUND {
                continue;
            }
            area[c as usize] += 1;
            if !in_frame[c as usize] {
                in_frame[c as usize] = true;
                touched.push(c);
            }
        }
        for &id in &touched {
            freq[id as usize] += 1;
            in_frame[id as usize] = false;
        }
    }
    freq.iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(id, &f)| InstanceStats {
            id: id as InstanceId,
            freq: f,
            area: area[id],
        })
        .collect()
}

/// `Less` means `a` ranks ahead of `b`.
pub fn compare_priority(a: &InstanceStats, b: &InstanceStats) -> Ordering {
    b.freq.cmp(&a.freq).then(b.area.cmp(&a.area)).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackletSelection {
    pub tracklets: Vec<InstanceStats>,
    pub k_requested: usize,
    pub k_effective: usize,
}

impl TrackletSelection {
    pub fn rank_of(&self, id: InstanceId) -> Option<usize> {
        self.tracklets.iter().position(|t| t.id == id)
    }

    pub fn ids(&self) -> Vec<InstanceId> {
        self.tracklets.iter().map(|t| t.id).collect()
    }
}

pub fn select_tracklets(stats: &[InstanceStats], k: usize) -> Result<TrackletSelection, PlanError> {
    if k == 0 {
        return Err(PlanError::InvalidK);
    }
    let mut sorted = stats.to_vec();
    sorted.sort_unstable_by(compare_priority);
    sorted.truncate(k);
    Ok(TrackletSelection {
        k_effective: sorted.len(),
        tracklets: sorted,
        k_requested: k,
    })
}

/// Mean `(x, y)` of the cells equal to `id`, or `None` if it is absent.
pub fn centroid(map: &IdMap, id: InstanceId) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut count) = (0u64, 0u64, 0u64);
    let w = map.width() as usize;
    for (row, cells) in map.cells().chunks_exact(w).enumerate() {
        for (col, &c) in cells.iter().enumerate() {
            if c == id {
                sx += col as u64;
                sy += row as u64;
                count += 1;
            }
        }
    }
    (count > 0).then(|| (sx as f64 / count as f64, sy as f64 / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementSource {
    Computed,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkPlacement {
    /// Source-frame index.
    pub frame_index: usize,
    pub instance_id: InstanceId,
    /// Color/z-order rank; tracklet position for selected instances.
    pub rank: usize,
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub source: PlacementSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub sparsify: SparsifyPlan,
    pub tracklets: TrackletSelection,
    pub placements: Vec<MarkPlacement>,
    pub style: MarkStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_source: Option<String>,
}

impl PromptPlan {
    pub fn placements_for(&self, frame_index: usize) -> impl Iterator<Item = &MarkPlacement> {
        self.placements.iter().filter(move |p| p.frame_index == frame_index)
    }
}

/// Runs the whole selection pipeline: sparsify, stats, top-k, centroids.
pub fn build_prompt_plan(
    frames: &FrameSequence,
    masks: &MaskSequence,
    m: usize,
    k: usize,
    style: &MarkStyle,
    overrides: Option<&MarkOverrideFile>,
) -> Result<PromptPlan, PlanError> {
    masks.check_aligned(frames)?;
    let sparsify = sparsify_indices(masks.len(), m)?;
    plan_from_sparsify(masks, sparsify, k, style, overrides)
}

/// Like [`build_prompt_plan`] with explicitly chosen retained frames.
pub fn plan_from_sparsify(
    masks: &MaskSequence,
    sparsify: SparsifyPlan,
    k: usize,
    style: &MarkStyle,
    overrides: Option<&MarkOverrideFile>,
) -> Result<PromptPlan, PlanError> {
    let n = masks.len();
    let valid = sparsify.source_count == n && !sparsify.indices.is_empty() && sparsify.indices.iter().all(|&i| i < n);
    if !valid {
        return Err(PlanError::InvalidCount {
            n,
            m: sparsify.indices.len(),
        });
    }
    if let Some(o) = overrides {
        o.validate(n, masks.width(), masks.height())?;
    }

    let stats = instance_stats(masks, &sparsify);
    let tracklets = select_tracklets(&stats, k)?;

    let per_frame: Vec<Vec<MarkPlacement>> = sparsify
        .indices
        .par_iter()
        .map(|&frame_index| {
            let map = &masks.masks()[frame_index];
            tracklets
                .tracklets
                .iter()
                .enumerate()
                .filter_map(|(rank, t)| {
                    centroid(map, t.id).map(|(x, y)| MarkPlacement {
                        frame_index,
                        instance_id: t.id,
                        rank,
                        x,
                        y,
                        label: t.id.to_string(),
                        source: PlacementSource::Computed,
                    })
                })
                .collect()
        })
        .collect();
    let mut placements: Vec<MarkPlacement> = per_frame.into_iter().flatten().collect();

    if let Some(o) = overrides {
        placements = apply_overrides(placements, &sparsify, &tracklets, o);
    }

    Ok(PromptPlan {
        sparsify,
        tracklets,
        placements,
        style: style.clone(),
        override_source: None,
    })
}

/// Replaces computed placements on every retained frame the override lists.
/// Entries for frames that are not retained are ignored. IDs outside the
/// selection get ranks after the last tracklet, ordered by ID, so each keeps
/// one color across the sequence.
fn apply_overrides(
    computed: Vec<MarkPlacement>,
    sparsify: &SparsifyPlan,
    tracklets: &TrackletSelection,
    overrides: &MarkOverrideFile,
) -> Vec<MarkPlacement> {
    let retained: BTreeSet<usize> = sparsify.indices.iter().copied().collect();
    let mut by_frame: BTreeMap<usize, Vec<&crate::mask_store::OverrideMark>> = BTreeMap::new();
    for f in overrides.frames.iter().filter(|f| retained.contains(&f.index)) {
        by_frame.entry(f.index).or_default().extend(f.marks.iter());
    }
    let extra_ids: BTreeSet<InstanceId> = by_frame
        .values()
        .flatten()
        .map(|m| m.id)
        .filter(|id| tracklets.rank_of(*id).is_none())
        .collect();
    let rank_for = |id: InstanceId| {
        tracklets
            .rank_of(id)
            .unwrap_or_else(|| tracklets.k_effective + extra_ids.iter().position(|&e| e == id).unwrap_or(0))
    };

    let mut out = Vec::with_capacity(computed.len());
    for &frame_index in &sparsify.indices {
        match by_frame.get(&frame_index) {
            Some(marks) => out.extend(marks.iter().map(|m| MarkPlacement {
                frame_index,
                instance_id: m.id,
                rank: rank_for(m.id),
                x: m.x,
                y: m.y,
                label: m.label.clone().unwrap_or_else(|| m.id.to_string()),
                source: PlacementSource::Override,
            })),
            None => out.extend(computed.iter().filter(|p| p.frame_index == frame_index).cloned()),
        }
    }
    out
}
