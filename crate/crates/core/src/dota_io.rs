//! DOTA annotation and Task-1 detection files, plus tiling of large scenes.
//!
//! Annotation lines hold ten whitespace-separated tokens:
//! `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`. Lines with any other token
//! count (such as the `imagesource:` and `gsd:` headers) are skipped.
//! Detection files are one per category, named `Task1_<category>.txt`, with
//! lines `image_id score x1 y1 x2 y2 x3 y3 x4 y4`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_convex, polygon_area, Point, Quad};
use crate::postprocess::{quad_nms, rank_order, Detection};

pub const DEFAULT_TILE: usize = 1024;
pub const DEFAULT_OVERLAP: usize = 200;
/// Minimum fraction of a ground-truth quad's area that must fall inside a
/// window for the quad to be assigned to it.
pub const DEFAULT_MIN_INSIDE_FRACTION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum DotaError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid tiling: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Plane,
    BaseballDiamond,
    Bridge,
    GroundTrackField,
    SmallVehicle,
    LargeVehicle,
    Ship,
    TennisCourt,
    BasketballCourt,
    StorageTank,
    SoccerBallField,
    Roundabout,
    Harbor,
    SwimmingPool,
    Helicopter,
}

impl Category {
    /// All fifteen categories in the standard DOTA order.
    pub const ALL: [Category; 15] = [
        Category::Plane,
        Category::BaseballDiamond,
        Category::Bridge,
        Category::GroundTrackField,
        Category::SmallVehicle,
        Category::LargeVehicle,
        Category::Ship,
        Category::TennisCourt,
        Category::BasketballCourt,
        Category::StorageTank,
        Category::SoccerBallField,
        Category::Roundabout,
        Category::Harbor,
        Category::SwimmingPool,
        Category::Helicopter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Plane => "plane",
            Category::BaseballDiamond => "baseball-diamond",
            Category::Bridge => "bridge",
            Category::GroundTrackField => "ground-track-field",
            Category::SmallVehicle => "small-vehicle",
            Category::LargeVehicle => "large-vehicle",
            Category::Ship => "ship",
            Category::TennisCourt => "tennis-court",
            Category::BasketballCourt => "basketball-court",
            Category::StorageTank => "storage-tank",
            Category::SoccerBallField => "soccer-ball-field",
            Category::Roundabout => "roundabout",
            Category::Harbor => "harbor",
            Category::SwimmingPool => "swimming-pool",
            Category::Helicopter => "helicopter",
        }
    }

    /// Column label used in results tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            Category::Plane => "Plane",
            Category::BaseballDiamond => "BD",
            Category::Bridge => "Bridge",
            Category::GroundTrackField => "GTF",
            Category::SmallVehicle => "SV",
            Category::LargeVehicle => "LV",
            Category::Ship => "Ship",
            Category::TennisCourt => "TC",
            Category::BasketballCourt => "BC",
            Category::StorageTank => "ST",
            Category::SoccerBallField => "SBF",
            Category::Roundabout => "RA",
            Category::Harbor => "Harbor",
            Category::SwimmingPool => "SP",
            Category::Helicopter => "HC",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_abbrev(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.abbrev() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    /// Accepts canonical names and table abbreviations.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .or_else(|| Self::from_abbrev(s))
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub quad: Quad,
    pub category: Category,
    pub difficult: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedAnnotations {
    pub records: Vec<AnnotationRecord>,
    /// Lines without exactly ten tokens (headers, blanks, junk).
    pub skipped_lines: usize,
    /// Ten-token lines whose category is not one of the fifteen.
    pub unknown_category: usize,
    /// Ten-token lines whose quad could not be canonicalized.
    pub degenerate: usize,
}

fn parse_coord(tok: &str, line: usize) -> Result<f64, DotaError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DotaError::Parse {
            line,
            msg: format!("bad coordinate {tok:?}"),
        }),
    }
}

pub fn parse_annotations(text: &str) -> Result<ParsedAnnotations, DotaError> {
    let mut out = ParsedAnnotations::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != 10 {
            out.skipped_lines += 1;
            continue;
        }
        let mut c = [0.0; 8];
        for (k, tok) in tokens[..8].iter().enumerate() {
            c[k] = parse_coord(tok, line_no)?;
        }
        let difficult = match tokens[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(DotaError::Parse {
                    line: line_no,
                    msg: format!("bad difficulty {other:?}"),
                })
            }
        };
        let Ok(category) = tokens[8].parse::<Category>() else {
            out.unknown_category += 1;
            continue;
        };
        match Quad::from_coords(c) {
            Ok(quad) => out.records.push(AnnotationRecord {
                quad,
                category,
                difficult,
            }),
            Err(_) => out.degenerate += 1,
        }
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<ParsedAnnotations, DotaError> {
    parse_annotations(&fs::read_to_string(path)?)
}

fn push_coords(out: &mut String, q: &Quad) {
    for (k, v) in q.coords().iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.6}");
    }
}

/// Annotation text with coordinates at six decimals and LF line endings.
pub fn write_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        push_coords(&mut out, &r.quad);
        let _ = writeln!(out, " {} {}", r.category.name(), u8::from(r.difficult));
    }
    out
}

pub fn detection_file_name(category: Category) -> String {
    format!("Task1_{}.txt", category.name())
}

/// Detection lines for every category, keyed by category. Within each
/// image, lines are ordered by score descending then `source_index`.
/// Detections whose `class_id` is not a category index are dropped.
pub fn format_detections<'a, I>(images: I) -> BTreeMap<Category, String>
where
    I: IntoIterator<Item = (&'a str, &'a [Detection])>,
{
    let mut files: BTreeMap<Category, String> = Category::ALL
        .into_iter()
        .map(|c| (c, String::new()))
        .collect();
    for (image_id, dets) in images {
        let mut sorted: Vec<&Detection> = dets.iter().collect();
        sorted.sort_by(|a, b| rank_order(a, b));
        for d in sorted {
            let Some(cat) = Category::from_index(d.class_id) else {
                continue;
            };
            let buf = files.get_mut(&cat).expect("all categories present");
            let _ = write!(buf, "{image_id} {:.6} ", d.score);
            push_coords(buf, &d.quad);
            buf.push('\n');
        }
    }
    files
}

/// Writes one `Task1_<category>.txt` per category into `dir` (empty files
/// for categories without detections).
pub fn write_detections(dir: &Path, images: &[(String, Vec<Detection>)]) -> Result<(), DotaError> {
    fs::create_dir_all(dir)?;
    let files = format_detections(images.iter().map(|(id, d)| (id.as_str(), d.as_slice())));
    for (cat, body) in files {
        fs::write(dir.join(detection_file_name(cat)), body)?;
    }
    Ok(())
}

/// One parsed line of a Task-1 detection file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLine {
    pub image_id: String,
    pub score: f64,
    pub quad: Quad,
}

/// Parses a Task-1 detection file body. Blank lines are ignored; lines
/// with degenerate quads are dropped.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionLine>, DotaError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 10 {
            return Err(DotaError::Parse {
                line,
                msg: format!("expected 10 tokens, found {}", tokens.len()),
            });
        }
        let score = parse_coord(tokens[1], line)?;
        let mut c = [0.0; 8];
        for k in 0..8 {
            c[k] = parse_coord(tokens[2 + k], line)?;
        }
        if let Ok(quad) = Quad::from_coords(c) {
            out.push(DetectionLine {
                image_id: tokens[0].to_string(),
                score,
                quad,
            });
        }
    }
    Ok(out)
}

/// Reads every `Task1_<category>.txt` present in `dir`, grouped by image id.
/// Each detection gets a `source_index` equal to its line position within
/// its category file.
pub fn read_detections(dir: &Path) -> Result<BTreeMap<String, Vec<Detection>>, DotaError> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for cat in Category::ALL {
        let path = dir.join(detection_file_name(cat));
        if !path.exists() {
            continue;
        }
        let lines = parse_detections(&fs::read_to_string(&path)?)?;
        for (i, l) in lines.into_iter().enumerate() {
            out.entry(l.image_id).or_default().push(Detection {
                quad: l.quad,
                score: l.score,
                class_id: cat.index(),
                source_index: i as u64,
            });
        }
    }
    Ok(out)
}

/// A processing window in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWindow {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl TileWindow {
    pub fn origin(&self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }

    pub fn contains_pixel(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.height
    }

    fn rect(&self) -> [Point; 4] {
        let (x0, y0) = (self.x as f64, self.y as f64);
        let (x1, y1) = (x0 + self.width as f64, y0 + self.height as f64);
        [
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ]
    }
}

fn axis_origins(extent: usize, tile: usize, step: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        if o + tile >= extent {
            origins.push(extent - tile);
            break;
        }
        origins.push(o);
        o += step;
    }
    origins
}

/// Windows of `tile x tile` pixels stepping by `tile - overlap`, with the
/// last window on each axis pulled back to end at the image edge. Images
/// narrower than a tile get one window spanning the image. Row-major.
pub fn tile_plan(
    img_w: usize,
    img_h: usize,
    tile: usize,
    overlap: usize,
) -> Result<Vec<TileWindow>, DotaError> {
    if tile == 0 || overlap >= tile {
        return Err(DotaError::Config(format!(
            "overlap {overlap} must be smaller than tile {tile}"
        )));
    }
    if img_w == 0 || img_h == 0 {
        return Err(DotaError::Config("empty image".into()));
    }
    let step = tile - overlap;
    let xs = axis_origins(img_w, tile, step);
    let ys = axis_origins(img_h, tile, step);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push(TileWindow {
                x,
                y,
                width: tile.min(img_w),
                height: tile.min(img_h),
            });
        }
    }
    Ok(out)
}

/// Drops vertices of a convex polygon until four remain, each time removing
/// the vertex whose removal loses the least area.
fn reduce_to_four(mut poly: Vec<Point>) -> Vec<Point> {
    while poly.len() > 4 {
        let n = poly.len();
        let (drop, _) = (0..n)
            .map(|i| {
                let prev = poly[(i + n - 1) % n];
                let next = poly[(i + 1) % n];
                (i, polygon_area(&[prev, poly[i], next]).abs())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty polygon");
        poly.remove(drop);
    }
    poly
}

/// Ground truth assigned to `window`, in window-local coordinates.
///
/// A record is kept when at least `min_inside` of its area lies inside the
/// window. Kept quads are clipped to the window; clipped polygons with more
/// than four vertices are reduced to four by dropping the vertices that
/// contribute the least area.
pub fn crop_annotations(
    records: &[AnnotationRecord],
    window: &TileWindow,
    min_inside: f64,
) -> Vec<AnnotationRecord> {
    let rect = window.rect();
    let (ox, oy) = (window.x as f64, window.y as f64);
    records
        .iter()
        .filter_map(|r| {
            let area = r.quad.area();
            if area <= 0.0 {
                return None;
            }
            let clipped = clip_convex(r.quad.vertices(), &rect);
            let inside = polygon_area(&clipped).max(0.0);
            if inside < min_inside * area {
                return None;
            }
            let mut poly = reduce_to_four(clipped);
            poly.dedup();
            if poly.len() > 1 && poly.first() == poly.last() {
                poly.pop();
            }
            let pts: [Point; 4] = poly.try_into().ok()?;
            let quad = Quad::canonicalize(pts.map(|p| p.translate(-ox, -oy))).ok()?;
            Some(AnnotationRecord { quad, ..*r })
        })
        .collect()
}

/// Shifts window-local detections to source coordinates, concatenates
/// them, and runs per-class NMS. Output is grouped by ascending class id,
/// each group in NMS keep order.
pub fn merge_tiles(
    per_window: &[Vec<Detection>],
    windows: &[TileWindow],
    nms_iou: f64,
) -> Vec<Detection> {
    assert_eq!(
        per_window.len(),
        windows.len(),
        "one detection list per window"
    );
    let mut by_class: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for (dets, w) in per_window.iter().zip(windows) {
        for d in dets {
            by_class.entry(d.class_id).or_default().push(Detection {
                quad: d.quad.translate(w.x as f64, w.y as f64),
                ..*d
            });
        }
    }
    by_class
        .values()
        .flat_map(|dets| quad_nms(dets, nms_iou))
        .collect()
}
