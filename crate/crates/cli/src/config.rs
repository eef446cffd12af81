//! Flat `key = value` configuration shared by every subcommand.
//!
//! ```text
//! # comments and blank lines are ignored
//! base_size = 16
//! scales = 4,8,16,32,64
//! ratios = 1:1,1:2,2:1,1:8,8:1
//! scale_levels = 2,3,4,5,5    # optional
//! pos_iou = 0.7
//! neg_iou = 0.3
//! nms_iou = 0.5
//! score_thr = 0.0
//! top_k = 2000
//! tile = 1024
//! overlap = 200
//! min_inside = 0.7
//! eval_iou = 0.5
//! ap_method = continuous      # or eleven_point
//! seed = 0
//! lateral_channels = 16
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use quadprop::anchors::{AnchorSpec, Ratio};
use quadprop::boxcoder::{DEFAULT_NEG_IOU, DEFAULT_POS_IOU};
use quadprop::dota_io::{DEFAULT_MIN_INSIDE_FRACTION, DEFAULT_OVERLAP, DEFAULT_TILE};
use quadprop::eval::{ApMethod, DEFAULT_EVAL_IOU};
use quadprop::model::DEFAULT_LATERAL_CHANNELS;
use quadprop::postprocess::DEFAULT_NMS_IOU;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub anchors: AnchorSpec,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub nms_iou: f64,
    pub score_thr: f64,
    pub top_k: usize,
    pub tile: usize,
    pub overlap: usize,
    pub min_inside: f64,
    pub eval_iou: f64,
    pub ap_method: ApMethod,
    pub seed: u64,
    pub lateral_channels: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            anchors: AnchorSpec::default(),
            pos_iou: DEFAULT_POS_IOU,
            neg_iou: DEFAULT_NEG_IOU,
            nms_iou: DEFAULT_NMS_IOU,
            score_thr: 0.0,
            top_k: 2000,
            tile: DEFAULT_TILE,
            overlap: DEFAULT_OVERLAP,
            min_inside: DEFAULT_MIN_INSIDE_FRACTION,
            eval_iou: DEFAULT_EVAL_IOU,
            ap_method: ApMethod::Continuous,
            seed: 0,
            lateral_channels: DEFAULT_LATERAL_CHANNELS,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value.split(',').map(|v| parse(key, v)).collect()
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "base_size" => self.anchors.base_size = parse(key, value)?,
            "scales" => self.anchors.scales = parse_list(key, value)?,
            "ratios" => self.anchors.ratios = parse_list::<Ratio>(key, value)?,
            "scale_levels" => self.anchors.scale_levels = Some(parse_list(key, value)?),
            "pos_iou" => self.pos_iou = parse(key, value)?,
            "neg_iou" => self.neg_iou = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "score_thr" => self.score_thr = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "tile" => self.tile = parse(key, value)?,
            "overlap" => self.overlap = parse(key, value)?,
            "min_inside" => self.min_inside = parse(key, value)?,
            "eval_iou" => self.eval_iou = parse(key, value)?,
            "ap_method" => self.ap_method = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lateral_channels" => self.lateral_channels = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        self.anchors
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        unit("pos_iou", self.pos_iou)?;
        unit("neg_iou", self.neg_iou)?;
        unit("nms_iou", self.nms_iou)?;
        unit("score_thr", self.score_thr)?;
        unit("min_inside", self.min_inside)?;
        unit("eval_iou", self.eval_iou)?;
        if self.neg_iou > self.pos_iou {
            return Err(CliError::Config(format!(
                "neg_iou {} exceeds pos_iou {}",
                self.neg_iou, self.pos_iou
            )));
        }
        if self.tile == 0 || self.overlap >= self.tile {
            return Err(CliError::Config(format!(
                "overlap {} must be smaller than tile {}",
                self.overlap, self.tile
            )));
        }
        if self.top_k == 0 || self.lateral_channels == 0 {
            return Err(CliError::Config(
                "top_k and lateral_channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_schema() {
        let mut cfg = Config::default();
        cfg.apply_text(
            "# demo\nscales = 2, 4\nratios = 1:1,1:3\nnms_iou = 0.3  # trailing\n\nap_method = eleven_point\n",
        )
        .unwrap();
        assert_eq!(cfg.anchors.scales, vec![2.0, 4.0]);
        assert_eq!(cfg.anchors.ratios[1], Ratio::new(1.0, 3.0));
        assert_eq!(cfg.nms_iou, 0.3);
        assert_eq!(cfg.ap_method, ApMethod::ElevenPoint);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = Config::default();
        assert!(cfg.apply_text("nope = 1").is_err());
        assert!(cfg.apply_text("scales 4").is_err());
        assert!(cfg.apply_text("tile = -3").is_err());
        cfg.set("neg_iou", "0.9").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }
}
