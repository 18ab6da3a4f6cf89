use serde::{Deserialize, Serialize};

use crate::error::RenderError;

pub type Rgb = [u8; 3];

/// Which overlay layers are drawn besides the ID marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkTier {
    MarkersOnly,
    MarkersPlusOutline,
    MarkersPlusMask,
}

impl MarkTier {
    pub const ALL: [MarkTier; 3] = [
        MarkTier::MarkersOnly,
        MarkTier::MarkersPlusOutline,
        MarkTier::MarkersPlusMask,
    ];

    pub fn draws_outline(self) -> bool {
        !matches!(self, MarkTier::MarkersOnly)
    }

    pub fn draws_fill(self) -> bool {
        matches!(self, MarkTier::MarkersPlusMask)
    }
}

impl std::str::FromStr for MarkTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markers" | "markers_only" | "markers-only" => Ok(MarkTier::MarkersOnly),
            "outline" | "markers_plus_outline" | "markers-plus-outline" => Ok(MarkTier::MarkersPlusOutline),
            "mask" | "markers_plus_mask" | "markers-plus-mask" => Ok(MarkTier::MarkersPlusMask),
            other => Err(format!("unknown mark tier {other:?} (markers|outline|mask)")),
        }
    }
}

/// Eight high-contrast colors, red first.
pub const DEFAULT_PALETTE: [Rgb; 8] = [
    [230, 25, 25],
    [25, 100, 230],
    [20, 160, 60],
    [240, 140, 0],
    [145, 30, 180],
    [0, 170, 170],
    [220, 40, 160],
    [110, 110, 20],
];

pub const DEFAULT_DIAMETER_PX: u32 = 60;
pub const MIN_DIAMETER_PX: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkStyle {
    pub diameter_px: u32,
    pub tier: MarkTier,
    pub palette: Vec<Rgb>,
    /// Target digit height as a fraction of the diameter.
    pub label_scale: f64,
    pub outline_thickness_px: u32,
    pub mask_alpha: f64,
}

impl Default for MarkStyle {
    fn default() -> Self {
        Self {
            diameter_px: DEFAULT_DIAMETER_PX,
            tier: MarkTier::MarkersPlusOutline,
            palette: DEFAULT_PALETTE.to_vec(),
            label_scale: 0.5,
            outline_thickness_px: 2,
            mask_alpha: 0.35,
        }
    }
}

impl MarkStyle {
    pub fn with_diameter(mut self, diameter_px: u32) -> Self {
        self.diameter_px = diameter_px;
        self
    }

    pub fn with_tier(mut self, tier: MarkTier) -> Self {
        self.tier = tier;
        self
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.diameter_px < MIN_DIAMETER_PX {
            return Err(RenderError::InvalidStyle(format!(
                "diameter {}px is below the {MIN_DIAMETER_PX}px minimum",
                self.diameter_px
            )));
        }
        if self.palette.is_empty() {
            return Err(RenderError::InvalidStyle("palette is empty".into()));
        }
        if !(self.label_scale > 0.0 && self.label_scale <= 1.0) {
            return Err(RenderError::InvalidStyle(format!(
                "label_scale {} outside (0, 1]",
                self.label_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_alpha) {
            return Err(RenderError::InvalidStyle(format!(
                "mask_alpha {} outside [0, 1]",
                self.mask_alpha
            )));
        }
        if self.outline_thickness_px == 0 {
            return Err(RenderError::InvalidStyle("outline thickness must be >= 1".into()));
        }
        Ok(())
    }
}

/// Palette entry for a tracklet rank; wraps around the palette.
pub fn color_for(rank: usize, palette: &[Rgb]) -> Rgb {
    assert!(!palette.is_empty(), "palette must not be empty");
    palette[rank % palette.len()]
}
