//! Quadrilateral region proposals for oriented object detection in aerial
//! imagery.
//!
//! The crate covers the geometric and evaluation side of a multi-angle
//! proposal pipeline: polygon IoU on canonical quads, anchor generation,
//! eight-coordinate box coding, quad NMS, a seeded toy backbone with FPN
//! fusion and an RPN head, DOTA file formats and tiling, VOC-style AP, and
//! a synthetic scene generator with a perfect-knowledge proposal scorer.

pub mod anchors;
pub mod boxcoder;
pub mod dota_io;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod postprocess;
pub mod raster;
pub mod rng;
pub mod synth;

pub use anchors::{anchor_shapes, grid_anchors, Anchor, AnchorSpec, Ratio};
pub use boxcoder::{assign_targets, decode, encode, sample_minibatch, AnchorLabel, Delta8};
pub use dota_io::{AnnotationRecord, Category, TileWindow};
pub use eval::{average_precision, mean_ap, ApMethod, ClassAp};
pub use geometry::{intersection_area, iou, Point, Quad};
pub use model::{FeatureMap, PyramidSpec};
pub use postprocess::{filter_detections, quad_nms, Detection};
