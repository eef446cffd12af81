//! Multi-scale, multi-ratio anchor generation over feature grids.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{Point, Quad};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("invalid anchor spec: {0}")]
    InvalidSpec(String),
    #[error("invalid ratio {0:?}, expected `w:h`")]
    BadRatio(String),
}

/// Aspect ratio as a `width:height` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub w: f64,
    pub h: f64,
}

impl Ratio {
    pub const fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }
}

impl FromStr for Ratio {
    type Err = AnchorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AnchorError::BadRatio(s.to_string());
        let (w, h) = s.trim().split_once(':').ok_or_else(bad)?;
        let w: f64 = w.trim().parse().map_err(|_| bad())?;
        let h: f64 = h.trim().parse().map_err(|_| bad())?;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(bad());
        }
        Ok(Self { w, h })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub base_size: f64,
    pub scales: Vec<f64>,
    pub ratios: Vec<Ratio>,
    /// When set, scale `k` is only emitted at pyramid level `scale_levels[k]`.
    /// When unset, every shape is emitted at every level.
    pub scale_levels: Option<Vec<u32>>,
}

impl Default for AnchorSpec {
    /// Base 16 px, scales 4/8/16/32/64, ratios 1:1, 1:2, 2:1, 1:8, 8:1.
    fn default() -> Self {
        Self {
            base_size: 16.0,
            scales: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            ratios: vec![
                Ratio::new(1.0, 1.0),
                Ratio::new(1.0, 2.0),
                Ratio::new(2.0, 1.0),
                Ratio::new(1.0, 8.0),
                Ratio::new(8.0, 1.0),
            ],
            scale_levels: None,
        }
    }
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<(), AnchorError> {
        let bad = |m: &str| Err(AnchorError::InvalidSpec(m.to_string()));
        if !(self.base_size > 0.0 && self.base_size.is_finite()) {
            return bad("base_size must be positive");
        }
        if self.scales.is_empty() || self.ratios.is_empty() {
            return bad("scales and ratios must be non-empty");
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("scales must be positive");
        }
        if self.ratios.iter().any(|r| !(r.w > 0.0 && r.h > 0.0)) {
            return bad("ratio components must be positive");
        }
        if let Some(levels) = &self.scale_levels {
            if levels.len() != self.scales.len() {
                return bad("scale_levels must have one entry per scale");
            }
        }
        Ok(())
    }

    pub fn num_shapes(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    /// Shapes emitted at `level`, honoring `scale_levels`.
    pub fn shapes_for_level(&self, level: u32) -> Vec<(f64, f64)> {
        let per_ratio = self.ratios.len();
        anchor_shapes(self)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| match &self.scale_levels {
                Some(levels) => levels[i / per_ratio] == level,
                None => true,
            })
            .map(|(_, s)| s)
            .collect()
    }
}

/// One `(width, height)` per (scale, ratio) pair, scale-major. Ratios
/// preserve the area `(base_size * scale)^2`.
pub fn anchor_shapes(spec: &AnchorSpec) -> Vec<(f64, f64)> {
    let mut shapes = Vec::with_capacity(spec.num_shapes());
    for &scale in &spec.scales {
        let side = spec.base_size * scale;
        for r in &spec.ratios {
            let k = (r.w / r.h).sqrt();
            shapes.push((side * k, side / k));
        }
    }
    shapes
}

/// An axis-aligned anchor placed on a feature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub center: Point,
    pub width: f64,
    pub height: f64,
    pub level: u32,
}

impl Anchor {
    /// Corners in canonical order: top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point; 4] {
        let hw = 0.5 * self.width;
        let hh = 0.5 * self.height;
        let (cx, cy) = (self.center.x, self.center.y);
        [
            Point::new(cx - hw, cy - hh),
            Point::new(cx + hw, cy - hh),
            Point::new(cx + hw, cy + hh),
            Point::new(cx - hw, cy + hh),
        ]
    }

    pub fn to_quad(&self) -> Quad {
        Quad::from_canonical_unchecked(self.corners())
    }
}

/// Places every shape of `spec` (for `level`) at each cell of an
/// `feat_h x feat_w` grid, centered at `((j + 0.5) * stride, (i + 0.5) * stride)`.
/// Ordering is row-major over cells, shape-minor.
pub fn grid_anchors(
    spec: &AnchorSpec,
    feat_h: usize,
    feat_w: usize,
    stride: f64,
    level: u32,
) -> Vec<Anchor> {
    let shapes = spec.shapes_for_level(level);
    let mut out = Vec::with_capacity(feat_h * feat_w * shapes.len());
    for i in 0..feat_h {
        let cy = (i as f64 + 0.5) * stride;
        for j in 0..feat_w {
            let cx = (j as f64 + 0.5) * stride;
            for &(width, height) in &shapes {
                out.push(Anchor {
                    center: Point::new(cx, cy),
                    width,
                    height,
                    level,
                });
            }
        }
    }
    out
}

/// Anchors for every level of a pyramid over an `image_h x image_w` input,
/// with level `k` at stride `2^k`.
pub fn pyramid_anchors(
    spec: &AnchorSpec,
    image_h: usize,
    image_w: usize,
    levels: &[u32],
) -> Vec<Anchor> {
    levels
        .iter()
        .flat_map(|&level| {
            let stride = 1usize << level;
            grid_anchors(
                spec,
                image_h.div_ceil(stride),
                image_w.div_ceil(stride),
                stride as f64,
                level,
            )
        })
        .collect()
}
