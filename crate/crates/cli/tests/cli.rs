use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use quadprop::dota_io::{read_annotations, read_detections, write_detections, Category};
use quadprop::geometry::Quad;
use quadprop::postprocess::Detection;

fn quadprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadprop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_quadprop"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn iou_of_identical_squares() {
    let o = quadprop(&["iou", "--a", "0,0,1,0,1,1,0,1", "--b", "0,0,1,0,1,1,0,1"]);
    assert_eq!(stdout(&o), "1.000000\n");
}

#[test]
fn iou_accepts_negative_coordinates() {
    let o = quadprop(&[
        "iou",
        "--a",
        "-1,-1,1,-1,1,1,-1,1",
        "--b",
        "0,-1.414214,1.414214,0,0,1.414214,-1.414214,0",
    ]);
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
}

#[test]
fn exit_codes() {
    assert_eq!(
        quadprop(&["iou", "--a", "0,0,1,1", "--b", "0,0,1,0,1,1,0,1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        quadprop(&["iou", "--a", "0,0,0,0,0,0,0,0", "--b", "0,0,1,0,1,1,0,1"])
            .status
            .code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let o = quadprop(&[
        "--config",
        path_str(&cfg),
        "tile",
        "--width",
        "10",
        "--height",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    let o = quadprop(&["nms", "--iou", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("q.cfg");
    fs::write(&cfg, "# tiles\ntile = 100\noverlap = 20\n").unwrap();
    let o = quadprop(&[
        "--config",
        path_str(&cfg),
        "tile",
        "--width",
        "250",
        "--height",
        "100",
    ]);
    assert_eq!(
        stdout(&o),
        "x,y,width,height\n0,0,100,100\n80,0,100,100\n150,0,100,100\n"
    );
    let o = quadprop(&[
        "--config",
        path_str(&cfg),
        "tile",
        "--width",
        "250",
        "--height",
        "100",
        "--overlap",
        "50",
    ]);
    assert_eq!(
        stdout(&o),
        "x,y,width,height\n0,0,100,100\n50,0,100,100\n100,0,100,100\n150,0,100,100\n"
    );
}

#[test]
fn anchors_csv() {
    let o = quadprop(&[
        "anchors",
        "--base",
        "16",
        "--scales",
        "4,8,16,32,64",
        "--ratios",
        "1:1,1:2,2:1,1:8,8:1",
        "--grid",
        "2x3",
        "--stride",
        "8",
    ]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "center_x,center_y,w,h,level");
    assert_eq!(lines.len(), 1 + 2 * 3 * 25);
    assert_eq!(lines[1], "4.000000,4.000000,64.000000,64.000000,3");
    // second cell along the row
    assert!(lines[26].starts_with("12.000000,4.000000,"));
}

#[test]
fn nms_from_stdin() {
    let input = "source_index,class_id,score,x1,y1,x2,y2,x3,y3,x4,y4\n\
                 0,0,0.9,0,0,10,0,10,10,0,10\n\
                 1,0,0.8,1,0,11,0,11,10,1,10\n\
                 2,0,0.7,50,50,60,50,60,60,50,60\n\
                 3,1,0.6,0,0,10,0,10,10,0,10\n";
    let text = stdout(&with_stdin(&["nms", "--iou", "0.5"], input));
    let kept: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(kept, ["0", "2", "3"]);
    let text = stdout(&with_stdin(&["nms", "--iou", "0.9"], input));
    assert_eq!(text.lines().count(), 5);
    assert_eq!(with_stdin(&["nms"], "0,0,0.9,1,2\n").status.code(), Some(1));
}

fn write_table(dir: &Path, name: &str, aps: [f64; 15]) -> String {
    let body: String = Category::ALL
        .iter()
        .zip(aps)
        .map(|(c, ap)| format!("{} {ap:.3}\n", c.abbrev()))
        .collect();
    let p = dir.join(name);
    fs::write(&p, format!("# class ap\n{body}")).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn eval_precomputed_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let baseline = write_table(
        dir.path(),
        "baseline.txt",
        [
            0.802, 0.696, 0.096, 0.559, 0.402, 0.155, 0.277, 0.891, 0.669, 0.618, 0.467, 0.523,
            0.178, 0.449, 0.334,
        ],
    );
    let ours = write_table(
        dir.path(),
        "ours.txt",
        [
            0.755, 0.404, 0.372, 0.463, 0.443, 0.518, 0.740, 0.888, 0.559, 0.771, 0.565, 0.600,
            0.582, 0.487, 0.336,
        ],
    );
    let text = stdout(&quadprop(&["eval", "--precomputed", &baseline]));
    assert!(text.ends_with("All = 0.474400\n"), "{text}");
    assert!(text.contains("ground-track-field"));
    // exact mean of the fifteen printed values
    let text = stdout(&quadprop(&["eval", "--precomputed", &ours]));
    assert!(text.ends_with("All = 0.565533\n"), "{text}");

    let json_path = dir.path().join("r.json");
    let csv_out = stdout(&quadprop(&[
        "eval",
        "--precomputed",
        &baseline,
        "--format",
        "csv",
        "--json",
        path_str(&json_path),
    ]));
    assert!(csv_out.starts_with("category,abbrev,n_gt,n_det,ap\nplane,Plane,,,0.802000\n"));
    assert!(csv_out.ends_with("all,All,,,0.474400\n"));
    let json = fs::read_to_string(&json_path).unwrap();
    assert!(json.contains("\"map\": 0.4744"));
    assert!(json.contains("\"category\": \"small-vehicle\""));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "plane 1.5\n").unwrap();
    assert_eq!(
        quadprop(&["eval", "--precomputed", path_str(&bad)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        quadprop(&["eval", "--precomputed", &baseline, "--method", "bogus"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        stdout(&quadprop(&[
            "synth",
            "--seed",
            "7",
            "--n",
            "10",
            "--out",
            path_str(d.path()),
        ]));
    }
    for f in ["scene_7.pgm", "scene_7.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
    let pgm = fs::read(a.path().join("scene_7.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));
    let parsed = read_annotations(&a.path().join("scene_7.txt")).unwrap();
    assert_eq!(parsed.records.len(), 10);
    assert_eq!(parsed.skipped_lines, 2);
}

#[test]
fn eval_from_directories() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    for seed in ["1", "2"] {
        stdout(&quadprop(&[
            "synth",
            "--seed",
            seed,
            "--out",
            path_str(&gt),
        ]));
    }
    fs::remove_file(gt.join("scene_1.pgm")).unwrap();
    fs::remove_file(gt.join("scene_2.pgm")).unwrap();

    // perfect detections from the ground truth itself
    let images: Vec<(String, Vec<Detection>)> = ["scene_1", "scene_2"]
        .iter()
        .map(|id| {
            let recs = read_annotations(&gt.join(format!("{id}.txt")))
                .unwrap()
                .records;
            let dets = recs
                .iter()
                .enumerate()
                .map(|(i, r)| Detection::new(r.quad, 0.9, r.category.index(), i as u64))
                .collect();
            (id.to_string(), dets)
        })
        .collect();
    let dets = dir.path().join("dets");
    write_detections(&dets, &images).unwrap();
    let text = stdout(&quadprop(&[
        "eval",
        "--gt",
        path_str(&gt),
        "--dets",
        path_str(&dets),
        "--iou",
        "0.5",
    ]));
    assert!(text.ends_with("All = 1.000000\n"), "{text}");

    // a spurious high-scoring detection on an unannotated image halves one class's precision
    let mut extra = images.clone();
    let stray = Detection::new(
        Quad::axis_aligned(0.0, 0.0, 5.0, 5.0),
        0.99,
        images[0].1[0].class_id,
        0,
    );
    extra.push(("scene_9".to_string(), vec![stray]));
    let dets2 = dir.path().join("dets2");
    write_detections(&dets2, &extra).unwrap();
    let text = stdout(&quadprop(&[
        "eval",
        "--gt",
        path_str(&gt),
        "--dets",
        path_str(&dets2),
        "--format",
        "json",
    ]));
    assert!(!text.contains("\"map\": 1.0"), "{text}");
}

#[test]
fn tile_then_merge_restores_source_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    stdout(&quadprop(&[
        "synth",
        "--seed",
        "5",
        "--width",
        "300",
        "--height",
        "200",
        "--out",
        path_str(&src),
    ]));
    let tiles = dir.path().join("tiles");
    let plan = stdout(&quadprop(&[
        "tile",
        "--image",
        path_str(&src.join("scene_5.pgm")),
        "--annotations",
        path_str(&src.join("scene_5.txt")),
        "--tile",
        "128",
        "--overlap",
        "48",
        "--out",
        path_str(&tiles),
    ]));
    let windows: Vec<(usize, usize)> = plan
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<usize> = l.split(',').map(|t| t.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect();
    assert_eq!(windows.len(), 4 * 2);

    // every cropped annotation becomes a window-local detection
    let mut per_tile = Vec::new();
    for (x, y) in &windows {
        let id = format!("scene_5__{x}__{y}");
        assert!(tiles.join(format!("{id}.pgm")).exists());
        let recs = read_annotations(&tiles.join(format!("{id}.txt")))
            .unwrap()
            .records;
        let dets = recs
            .iter()
            .map(|r| Detection::new(r.quad, 0.8, r.category.index(), 0))
            .collect();
        per_tile.push((id, dets));
    }
    let tile_dets = dir.path().join("tile_dets");
    write_detections(&tile_dets, &per_tile).unwrap();
    let merged_dir = dir.path().join("merged");
    stdout(&quadprop(&[
        "merge",
        "--dets",
        path_str(&tile_dets),
        "--out",
        path_str(&merged_dir),
        "--iou",
        "0.5",
    ]));
    let merged = read_detections(&merged_dir).unwrap();
    let dets = &merged["scene_5"];

    let gts = read_annotations(&src.join("scene_5.txt")).unwrap().records;
    for d in dets {
        let best = gts
            .iter()
            .filter(|g| g.category.index() == d.class_id)
            .map(|g| g.quad.iou(&d.quad))
            .fold(0.0, f64::max);
        assert!(
            best > 0.5,
            "merged detection does not land on a source object"
        );
    }
    // no object is reported twice after merging
    for (i, a) in dets.iter().enumerate() {
        for b in &dets[i + 1..] {
            assert!(a.class_id != b.class_id || a.quad.iou(&b.quad) <= 0.5);
        }
    }
}

#[test]
fn detect_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&quadprop(&[
        "synth",
        "--seed",
        "2",
        "--width",
        "96",
        "--height",
        "80",
        "--out",
        path_str(dir.path()),
    ]));
    let img = dir.path().join("scene_2.pgm");
    let args = [
        "detect",
        "--image",
        path_str(&img),
        "--top-k",
        "200",
        "--seed",
        "3",
    ];
    let a = stdout(&quadprop(&args));
    let b = Command::new(env!("CARGO_BIN_EXE_quadprop"))
        .args(args)
        .env("QUADPROP_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a, stdout(&b));
    let rows = a.lines().count() - 1;
    assert!(rows > 0 && rows <= 200);

    let bad = Command::new(env!("CARGO_BIN_EXE_quadprop"))
        .args(args)
        .env("QUADPROP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
