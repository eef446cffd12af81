//! `quadprop`: command-line access to the quadrilateral proposal pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 1,
            Self::Config(_) => 2,
        }
    }
}

macro_rules! input_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Input(e.to_string())
            }
        })*
    };
}

input_errors!(
    std::io::Error,
    csv::Error,
    serde_json::Error,
    quadprop::geometry::GeometryError,
    quadprop::model::ModelError,
    quadprop::raster::RasterError,
    quadprop::synth::SynthError,
);

impl From<quadprop::dota_io::DotaError> for CliError {
    fn from(e: quadprop::dota_io::DotaError) -> Self {
        match e {
            quadprop::dota_io::DotaError::Config(m) => Self::Config(m),
            other => Self::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "quadprop",
    version,
    about = "Quadrilateral region proposals for oriented object detection"
)]
struct Cli {
    /// `key = value` configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Polygon IoU of two quadrilaterals given as `x1,y1,...,x4,y4`.
    Iou {
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        #[arg(long, allow_hyphen_values = true)]
        b: String,
    },
    /// Dump the anchors of one feature grid as CSV.
    Anchors {
        #[arg(long)]
        base: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<String>>,
        /// Feature grid as `HxW`.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        stride: f64,
        /// Pyramid level recorded in the output; defaults to log2(stride).
        #[arg(long)]
        level: Option<u32>,
    },
    /// Per-class greedy NMS over CSV rows
    /// `source_index,class_id,score,x1,y1,...,x4,y4` read from stdin.
    Nms {
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Print the tiling plan as CSV and optionally cut annotations and
    /// image tiles into `--out`.
    Tile {
        /// Source image (PGM/PPM); supplies the size and is cut into tiles.
        #[arg(long, conflicts_with_all = ["width", "height"])]
        image: Option<PathBuf>,
        #[arg(long, requires = "height")]
        width: Option<usize>,
        #[arg(long, requires = "width")]
        height: Option<usize>,
        /// DOTA annotation file to crop per window.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long)]
        min_inside: Option<f64>,
    },
    /// Merge per-tile Task-1 detections (image ids `<stem>__<x>__<y>`)
    /// back to source coordinates.
    Merge {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Per-class AP and mAP.
    Eval {
        /// Directory of `<image_id>.txt` DOTA annotation files.
        #[arg(long, requires = "dets", conflicts_with = "precomputed")]
        gt: Option<PathBuf>,
        /// Directory of `Task1_<category>.txt` detection files.
        #[arg(long, requires = "gt")]
        dets: Option<PathBuf>,
        /// File of `<category> <ap>` lines to aggregate instead of matching.
        #[arg(long)]
        precomputed: Option<PathBuf>,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
        format: OutputFormat,
        /// Also write the per-class results as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the per-class results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a seeded synthetic scene as a PGM image plus DOTA annotations.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the untrained toy detector on an image and print proposals as CSV.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        score_thr: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        iou: Option<f64>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("QUADPROP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "QUADPROP_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Iou { a, b } => commands::iou(&a, &b),
        Command::Anchors {
            base,
            scales,
            ratios,
            grid,
            stride,
            level,
        } => {
            if let Some(v) = base {
                cfg.anchors.base_size = v;
            }
            if let Some(v) = scales {
                cfg.anchors.scales = v;
            }
            if let Some(v) = ratios {
                cfg.set("ratios", &v.join(","))?;
            }
            cfg.validate()?;
            commands::anchors(&cfg, &grid, stride, level)
        }
        Command::Nms { iou } => {
            if let Some(v) = iou {
                cfg.nms_iou = v;
            }
            cfg.validate()?;
            commands::nms(&cfg)
        }
        Command::Tile {
            image,
            width,
            height,
            annotations,
            out,
            tile,
            overlap,
            min_inside,
        } => {
            if let Some(v) = tile {
                cfg.tile = v;
            }
            if let Some(v) = overlap {
                cfg.overlap = v;
            }
            if let Some(v) = min_inside {
                cfg.min_inside = v;
            }
            cfg.validate()?;
            let source = match (image, width, height) {
                (Some(p), _, _) => commands::TileSource::Image(p),
                (None, Some(w), Some(h)) => commands::TileSource::Size(w, h),
                _ => {
                    return Err(CliError::Config(
                        "tile needs --image or --width/--height".into(),
                    ))
                }
            };
            commands::tile(&cfg, source, annotations.as_deref(), out.as_deref())
        }
        Command::Merge { dets, out, iou } => {
            if let Some(v) = iou {
                cfg.nms_iou = v;
            }
            cfg.validate()?;
            commands::merge(&cfg, &dets, &out)
        }
        Command::Eval {
            gt,
            dets,
            precomputed,
            iou,
            method,
            format,
            csv,
            json,
        } => {
            if let Some(v) = iou {
                cfg.eval_iou = v;
            }
            if let Some(v) = method {
                cfg.set("ap_method", &v)?;
            }
            cfg.validate()?;
            let input = match (gt, dets, precomputed) {
                (_, _, Some(p)) => commands::EvalInput::Precomputed(p),
                (Some(g), Some(d), None) => commands::EvalInput::Dirs { gt: g, dets: d },
                _ => {
                    return Err(CliError::Config(
                        "eval needs --gt and --dets, or --precomputed".into(),
                    ))
                }
            };
            commands::eval(&cfg, input, format, csv.as_deref(), json.as_deref())
        }
        Command::Synth {
            seed,
            n,
            width,
            height,
            out,
        } => {
            if let Some(v) = seed {
                cfg.seed = v;
            }
            cfg.validate()?;
            commands::synth(&cfg, n, width, height, &out)
        }
        Command::Detect {
            image,
            seed,
            score_thr,
            top_k,
            iou,
        } => {
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = score_thr {
                cfg.score_thr = v;
            }
            if let Some(v) = top_k {
                cfg.top_k = v;
            }
            if let Some(v) = iou {
                cfg.nms_iou = v;
            }
            cfg.validate()?;
            commands::detect(&cfg, &image)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quadprop: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
