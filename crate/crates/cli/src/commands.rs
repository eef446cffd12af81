use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use quadprop::anchors::grid_anchors;
use quadprop::boxcoder::{decode, Delta8};
use quadprop::dota_io::{
    crop_annotations, merge_tiles, read_annotations, read_detections, tile_plan, write_annotations,
    write_detections, AnnotationRecord, Category, TileWindow,
};
use quadprop::eval::{evaluate, mean_ap, present_classes, ClassAp, EvalConfig, ImageEval};
use quadprop::geometry::{iou as quad_iou, Quad};
use quadprop::model::{Backbone, FeatureMap, Fpn, PyramidSpec, RpnHead};
use quadprop::postprocess::{filter_detections, quad_nms, Detection};
use quadprop::raster::{read_pnm, write_pgm};
use quadprop::synth::{generate_scene, SceneParams};
use serde_json::json;

use crate::config::Config;
use crate::{CliError, OutputFormat};

const DETECTION_HEADER: [&str; 11] = [
    "source_index",
    "class_id",
    "score",
    "x1",
    "y1",
    "x2",
    "y2",
    "x3",
    "y3",
    "x4",
    "y4",
];

fn parse_quad(s: &str) -> Result<Quad, CliError> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Input(format!("bad quad {s:?}")))?;
    let coords: [f64; 8] = vals
        .try_into()
        .map_err(|_| CliError::Input(format!("quad {s:?} needs 8 numbers")))?;
    Ok(Quad::from_coords(coords)?)
}

pub fn iou(a: &str, b: &str) -> Result<(), CliError> {
    println!("{:.6}", quad_iou(&parse_quad(a)?, &parse_quad(b)?));
    Ok(())
}

pub fn anchors(cfg: &Config, grid: &str, stride: f64, level: Option<u32>) -> Result<(), CliError> {
    let (h, w) = grid
        .split_once(['x', 'X'])
        .and_then(|(h, w)| {
            Some((
                h.trim().parse::<usize>().ok()?,
                w.trim().parse::<usize>().ok()?,
            ))
        })
        .ok_or_else(|| CliError::Config(format!("grid {grid:?} is not `HxW`")))?;
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(CliError::Config(format!(
            "stride must be positive, got {stride}"
        )));
    }
    let level = level.unwrap_or_else(|| stride.log2().round().max(0.0) as u32);
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    out.write_record(["center_x", "center_y", "w", "h", "level"])?;
    for a in grid_anchors(&cfg.anchors, h, w, stride, level) {
        out.write_record([
            format!("{:.6}", a.center.x),
            format!("{:.6}", a.center.y),
            format!("{:.6}", a.width),
            format!("{:.6}", a.height),
            a.level.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn detection_row(d: &Detection) -> Vec<String> {
    let mut row = vec![
        d.source_index.to_string(),
        d.class_id.to_string(),
        format!("{:.6}", d.score),
    ];
    row.extend(d.quad.coords().iter().map(|v| format!("{v:.6}")));
    row
}

fn write_detection_csv<'a>(dets: impl IntoIterator<Item = &'a Detection>) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    out.write_record(DETECTION_HEADER)?;
    for d in dets {
        out.write_record(detection_row(d))?;
    }
    out.flush()?;
    Ok(())
}

fn read_detection_csv(input: impl io::Read) -> Result<Vec<Detection>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut dets = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if i == 0 && rec.get(0) == Some(DETECTION_HEADER[0]) {
            continue;
        }
        let bad = |what: &str| CliError::Input(format!("row {}: {what}", i + 1));
        if rec.len() != 11 {
            return Err(bad(&format!("expected 11 fields, found {}", rec.len())));
        }
        let source_index: u64 = rec[0].parse().map_err(|_| bad("bad source_index"))?;
        let class_id: usize = rec[1].parse().map_err(|_| bad("bad class_id"))?;
        let score: f64 = rec[2].parse().map_err(|_| bad("bad score"))?;
        if !score.is_finite() {
            return Err(bad("non-finite score"));
        }
        let mut c = [0.0; 8];
        for k in 0..8 {
            c[k] = rec[3 + k].parse().map_err(|_| bad("bad coordinate"))?;
        }
        let quad = Quad::from_coords(c).map_err(|e| bad(&e.to_string()))?;
        dets.push(Detection {
            quad,
            score,
            class_id,
            source_index,
        });
    }
    Ok(dets)
}

/// NMS within each class; classes in ascending order.
fn per_class_nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_class.entry(d.class_id).or_default().push(*d);
    }
    by_class
        .values()
        .flat_map(|v| quad_nms(v, iou_thr))
        .collect()
}

pub fn nms(cfg: &Config) -> Result<(), CliError> {
    let dets = read_detection_csv(io::stdin().lock())?;
    write_detection_csv(&per_class_nms(&dets, cfg.nms_iou))
}

pub enum TileSource {
    Image(PathBuf),
    Size(usize, usize),
}

fn tile_id(stem: &str, w: &TileWindow) -> String {
    format!("{stem}__{}__{}", w.x, w.y)
}

fn crop(map: &FeatureMap, w: &TileWindow) -> FeatureMap {
    let mut out = FeatureMap::zeros(1, w.height, w.width);
    let c = map.channels() as f64;
    for y in 0..w.height {
        for x in 0..w.width {
            let v: f64 = (0..map.channels())
                .map(|ch| map.get(ch, w.y + y, w.x + x))
                .sum();
            out.set(0, y, x, v / c);
        }
    }
    out
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

pub fn tile(
    cfg: &Config,
    source: TileSource,
    annotations: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (image, width, height, stem) = match source {
        TileSource::Image(p) => {
            let map = read_pnm(&p)?;
            let (w, h) = (map.width(), map.height());
            (Some(map), w, h, file_stem(&p))
        }
        TileSource::Size(w, h) => (None, w, h, String::new()),
    };
    let stem = match annotations {
        Some(a) if stem.is_empty() => file_stem(a),
        _ if stem.is_empty() => "image".to_string(),
        _ => stem,
    };
    let windows = tile_plan(width, height, cfg.tile, cfg.overlap)?;
    let records = annotations.map(read_annotations).transpose()?;

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for w in &windows {
            let id = tile_id(&stem, w);
            if let Some(map) = &image {
                write_pgm(&dir.join(format!("{id}.pgm")), &crop(map, w))?;
            }
            if let Some(parsed) = &records {
                let cropped = crop_annotations(&parsed.records, w, cfg.min_inside);
                fs::write(dir.join(format!("{id}.txt")), write_annotations(&cropped))?;
            }
        }
    } else if image.is_some() || records.is_some() {
        eprintln!("quadprop: no --out given, only printing the plan");
    }

    let mut csv_out = csv::Writer::from_writer(io::stdout().lock());
    csv_out.write_record(["x", "y", "width", "height"])?;
    for w in &windows {
        csv_out.write_record([w.x, w.y, w.width, w.height].map(|v| v.to_string()))?;
    }
    csv_out.flush()?;
    Ok(())
}

/// Splits `<stem>__<x>__<y>` into its parts.
fn parse_tile_id(id: &str) -> Option<(&str, usize, usize)> {
    let mut parts = id.rsplitn(3, "__");
    let y = parts.next()?.parse().ok()?;
    let x = parts.next()?.parse().ok()?;
    Some((parts.next()?, x, y))
}

pub fn merge(cfg: &Config, dets_dir: &Path, out: &Path) -> Result<(), CliError> {
    let per_tile = read_detections(dets_dir)?;
    let mut groups: BTreeMap<String, (Vec<TileWindow>, Vec<Vec<Detection>>)> = BTreeMap::new();
    for (id, dets) in per_tile {
        let (stem, x, y) = parse_tile_id(&id).unwrap_or((id.as_str(), 0, 0));
        let g = groups.entry(stem.to_string()).or_default();
        g.0.push(TileWindow {
            x,
            y,
            width: 0,
            height: 0,
        });
        g.1.push(dets);
    }
    let merged: Vec<(String, Vec<Detection>)> = groups
        .into_iter()
        .map(|(stem, (windows, dets))| {
            let m = merge_tiles(&dets, &windows, cfg.nms_iou);
            (stem, m)
        })
        .collect();
    write_detections(out, &merged)?;
    for (stem, dets) in &merged {
        println!("{stem}: {} detections", dets.len());
    }
    Ok(())
}

pub enum EvalInput {
    Dirs { gt: PathBuf, dets: PathBuf },
    Precomputed(PathBuf),
}

fn read_precomputed(path: &Path) -> Result<Vec<ClassAp>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<ClassAp> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: String| CliError::Input(format!("{}:{}: {what}", path.display(), i + 1));
        let tokens: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        let [name, ap] = tokens[..] else {
            return Err(bad("expected `<category> <ap>`".into()));
        };
        let category: Category = name
            .parse()
            .map_err(|_| bad(format!("unknown category {name:?}")))?;
        let ap: f64 = ap
            .parse()
            .ok()
            .filter(|v: &f64| (0.0..=1.0).contains(v))
            .ok_or_else(|| bad(format!("AP {ap:?} is not in [0, 1]")))?;
        if out.iter().any(|c| c.category == category) {
            return Err(bad(format!("{} listed twice", category.name())));
        }
        out.push(ClassAp {
            category,
            ap,
            n_gt: 0,
            n_det: 0,
        });
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("{}: no classes", path.display())));
    }
    Ok(out)
}

fn read_eval_dirs(gt: &Path, dets: &Path) -> Result<Vec<ImageEval>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(gt)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "txt"));
    paths.sort();
    let mut gts: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for p in paths {
        gts.insert(file_stem(&p), read_annotations(&p)?.records);
    }
    let mut dets = read_detections(dets)?;
    let mut images: Vec<ImageEval> = gts
        .into_iter()
        .map(|(image_id, ground_truth)| ImageEval {
            detections: dets.remove(&image_id).unwrap_or_default(),
            image_id,
            ground_truth,
        })
        .collect();
    // detections on images without ground truth are all false positives
    images.extend(dets.into_iter().map(|(image_id, detections)| ImageEval {
        image_id,
        detections,
        ground_truth: Vec::new(),
    }));
    Ok(images)
}

fn render_table(rows: &[ClassAp], precomputed: bool, map: f64) -> String {
    let mut s = format!(
        "{:<20} {:<7} {:>6} {:>6} {:>9}\n",
        "category", "abbrev", "n_gt", "n_det", "ap"
    );
    for r in rows {
        let (g, d) = if precomputed {
            ("-".to_string(), "-".to_string())
        } else {
            (r.n_gt.to_string(), r.n_det.to_string())
        };
        s += &format!(
            "{:<20} {:<7} {g:>6} {d:>6} {:>9.6}\n",
            r.category.name(),
            r.category.abbrev(),
            r.ap
        );
    }
    s += &format!("All = {map:.6}\n");
    s
}

fn render_csv(rows: &[ClassAp], precomputed: bool, map: f64) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "abbrev", "n_gt", "n_det", "ap"])?;
    for r in rows {
        let (g, d) = if precomputed {
            (String::new(), String::new())
        } else {
            (r.n_gt.to_string(), r.n_det.to_string())
        };
        w.write_record([
            r.category.name().to_string(),
            r.category.abbrev().to_string(),
            g,
            d,
            format!("{:.6}", r.ap),
        ])?;
    }
    w.write_record(["all", "All", "", "", &format!("{map:.6}")])?;
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn render_json(
    cfg: &Config,
    rows: &[ClassAp],
    precomputed: bool,
    map: f64,
) -> Result<String, CliError> {
    let round = |v: f64| (v * 1e6).round() / 1e6;
    let classes: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "category": r.category,
                "abbrev": r.category.abbrev(),
                "n_gt": (!precomputed).then_some(r.n_gt),
                "n_det": (!precomputed).then_some(r.n_det),
                "ap": round(r.ap),
            })
        })
        .collect();
    let doc = json!({
        "ap_method": cfg.ap_method.to_string(),
        "iou": cfg.eval_iou,
        "classes": classes,
        "map": round(map),
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn eval(
    cfg: &Config,
    input: EvalInput,
    format: OutputFormat,
    csv_path: Option<&Path>,
    json_path: Option<&Path>,
) -> Result<(), CliError> {
    let (rows, classes, precomputed) = match input {
        EvalInput::Precomputed(p) => {
            let rows = read_precomputed(&p)?;
            let classes: Vec<Category> = rows.iter().map(|r| r.category).collect();
            (rows, classes, true)
        }
        EvalInput::Dirs { gt, dets } => {
            let images = read_eval_dirs(&gt, &dets)?;
            let classes = present_classes(&images);
            let ecfg = EvalConfig {
                iou_thr: cfg.eval_iou,
                method: cfg.ap_method,
            };
            (evaluate(&images, &classes, &ecfg), classes, false)
        }
    };
    let map = mean_ap(&rows, &classes).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(p) = csv_path {
        fs::write(p, render_csv(&rows, precomputed, map)?)?;
    }
    if let Some(p) = json_path {
        fs::write(p, render_json(cfg, &rows, precomputed, map)?)?;
    }
    let text = match format {
        OutputFormat::Table => render_table(&rows, precomputed, map),
        OutputFormat::Csv => render_csv(&rows, precomputed, map)?,
        OutputFormat::Json => render_json(cfg, &rows, precomputed, map)?,
    };
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

pub fn synth(
    cfg: &Config,
    n: usize,
    width: usize,
    height: usize,
    out: &Path,
) -> Result<(), CliError> {
    if width == 0 || height == 0 {
        return Err(CliError::Config("scene size must be positive".into()));
    }
    let params = SceneParams {
        seed: cfg.seed,
        width,
        height,
        n_objects: n,
        ..Default::default()
    };
    let scene = generate_scene(&params)?;
    fs::create_dir_all(out)?;
    let stem = format!("scene_{}", cfg.seed);
    write_pgm(&out.join(format!("{stem}.pgm")), &scene.image)?;
    let text = format!(
        "imagesource:quadprop-synth\ngsd:null\n{}",
        write_annotations(&scene.gts)
    );
    fs::write(out.join(format!("{stem}.txt")), text)?;
    println!("{}", out.join(&stem).display());
    Ok(())
}

/// Zero-pads `map` on the bottom and right up to multiples of `m`.
fn pad_to_multiple(map: &FeatureMap, m: usize) -> FeatureMap {
    let (c, h, w) = map.shape();
    let (ph, pw) = (h.div_ceil(m).max(1) * m, w.div_ceil(m).max(1) * m);
    if (ph, pw) == (h, w) {
        return map.clone();
    }
    let mut out = FeatureMap::zeros(c, ph, pw);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set(ch, y, x, map.get(ch, y, x));
            }
        }
    }
    out
}

pub fn detect(cfg: &Config, image: &Path) -> Result<(), CliError> {
    let input = read_pnm(image)?;
    let spec = PyramidSpec::default();
    let padded = pad_to_multiple(&input, spec.max_stride());
    let backbone = Backbone::seeded(spec.clone(), padded.channels(), cfg.seed)?;
    let c_maps = backbone.forward(&padded)?;
    let widths: Vec<usize> = c_maps.iter().map(FeatureMap::channels).collect();
    let p_maps = Fpn::seeded(&widths, cfg.lateral_channels, cfg.seed).forward(&c_maps)?;

    let mut dets = Vec::new();
    let mut next_index = 0u64;
    for (lvl, p) in spec.levels.iter().zip(&p_maps) {
        let shapes = cfg.anchors.shapes_for_level(lvl.level).len();
        if shapes == 0 {
            continue;
        }
        let out = RpnHead::seeded(p.channels(), shapes, cfg.seed).forward(p)?;
        let anchors = grid_anchors(
            &cfg.anchors,
            p.height(),
            p.width(),
            lvl.stride() as f64,
            lvl.level,
        );
        for (n, anchor) in anchors.iter().enumerate() {
            let (cell, k) = (n / shapes, n % shapes);
            let (i, j) = (cell / p.width(), cell % p.width());
            let d = Delta8(std::array::from_fn(|t| out.deltas.get(8 * k + t, i, j)));
            let source_index = next_index + n as u64;
            if let Ok(quad) = decode(anchor, &d) {
                dets.push(Detection {
                    quad,
                    score: out.objectness.get(k, i, j),
                    class_id: 0,
                    source_index,
                });
            }
        }
        next_index += anchors.len() as u64;
    }
    let kept = quad_nms(
        &filter_detections(&dets, cfg.score_thr, cfg.top_k),
        cfg.nms_iou,
    );
    write_detection_csv(&kept)
}
