//! Toy multi-level backbone, FPN top-down fusion, RPN head and the
//! regression/classification losses with analytic gradients.
//!
//! The networks are untrained: weights are drawn deterministically from a
//! seed (uniform in `±1/sqrt(fan_in)`, zero biases, see [`crate::rng`]),
//! so every forward pass is a pure function of `(input, seed)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::boxcoder::Delta8;
use crate::rng::{seeded, uniform, SeededRng};

const STREAM_BACKBONE: u64 = 0x6261_636b;
const STREAM_FPN: u64 = 0x0066_706e;
const STREAM_RPN: u64 = 0x0072_706e;

pub const DEFAULT_LATERAL_CHANNELS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("class index {label} out of range for {classes} classes")]
    Index { label: usize, classes: usize },
}

/// Dense `channels x height x width` grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if data.len() != channels * height * width {
            return Err(ModelError::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Shape("non-finite value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    fn map_inplace(mut self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        self.data.par_iter_mut().for_each(|v| *v = f(*v));
        self
    }

    fn relu(self) -> Self {
        self.map_inplace(|v| v.max(0.0))
    }

    fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .par_iter_mut()
            .zip(other.data.par_iter())
            .for_each(|(a, b)| *a += b);
    }
}

/// 2-D convolution with zero padding `kernel / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    /// `[out][in][ky][kx]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv2d {
    pub fn from_weights(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if kernel.is_multiple_of(2) || stride == 0 {
            return Err(ModelError::Shape(
                "kernel must be odd and stride positive".into(),
            ));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel
            || bias.len() != out_channels
        {
            return Err(ModelError::Shape("weight/bias length mismatch".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias,
        })
    }

    fn seeded(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| uniform(rng, -bound, bound))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    /// 1x1 convolution copying channel `i` to output `i`.
    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels];
        for c in 0..channels {
            weight[c * channels + c] = 1.0;
        }
        Self {
            in_channels: channels,
            out_channels: channels,
            kernel: 1,
            stride: 1,
            weight,
            bias: vec![0.0; channels],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap, ModelError> {
        if input.channels != self.in_channels {
            return Err(ModelError::Shape(format!(
                "conv expects {} channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let (h, w) = (input.height as isize, input.width as isize);
        let k = self.kernel;
        let s = self.stride as isize;
        let pad = (k / 2) as isize;
        let oh = ((h + 2 * pad - k as isize) / s + 1).max(0) as usize;
        let ow = ((w + 2 * pad - k as isize) / s + 1).max(0) as usize;

        let mut out = FeatureMap::zeros(self.out_channels, oh, ow);
        let plane_len = oh * ow;
        if plane_len == 0 {
            return Ok(out);
        }
        out.data
            .par_chunks_mut(plane_len)
            .enumerate()
            .for_each(|(oc, plane)| {
                plane.fill(self.bias[oc]);
                for ic in 0..self.in_channels {
                    let src = input.plane(ic);
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = self.weight[((oc * self.in_channels + ic) * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let dx = kx as isize - pad;
                            let dy = ky as isize - pad;
                            // ox range such that 0 <= ox*s + dx < w
                            let ox_lo = if dx >= 0 { 0 } else { (-dx + s - 1) / s };
                            let ox_hi = if w - 1 - dx < 0 {
                                0
                            } else {
                                ((w - 1 - dx) / s + 1).min(ow as isize)
                            };
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = oy as isize * s + dy;
                                if iy < 0 || iy >= h {
                                    continue;
                                }
                                let srow = &src[(iy * w) as usize..((iy + 1) * w) as usize];
                                let orow = &mut plane[oy * ow..(oy + 1) * ow];
                                for ox in ox_lo..ox_hi {
                                    orow[ox as usize] += wv * srow[(ox * s + dx) as usize];
                                }
                            }
                        }
                    }
                }
            });
        Ok(out)
    }
}

/// `relu(x + conv_b(relu(conv_a(x))))`
#[derive(Debug, Clone, PartialEq)]
struct ResidualBlock {
    conv_a: Conv2d,
    conv_b: Conv2d,
}

impl ResidualBlock {
    fn seeded(channels: usize, rng: &mut SeededRng) -> Self {
        Self {
            conv_a: Conv2d::seeded(channels, channels, 3, 1, rng),
            conv_b: Conv2d::seeded(channels, channels, 3, 1, rng),
        }
    }

    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap, ModelError> {
        let mut y = self.conv_b.forward(&self.conv_a.forward(x)?.relu())?;
        y.add_assign(x);
        Ok(y.relu())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidLevel {
    /// Level index `k`; the level's stride is `2^k`.
    pub level: u32,
    pub channels: usize,
}

impl PyramidLevel {
    pub fn stride(&self) -> usize {
        1 << self.level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSpec {
    pub levels: Vec<PyramidLevel>,
}

impl Default for PyramidSpec {
    /// C2..C5 at strides 4, 8, 16, 32 with 8, 16, 32, 64 channels.
    fn default() -> Self {
        Self {
            levels: vec![
                PyramidLevel {
                    level: 2,
                    channels: 8,
                },
                PyramidLevel {
                    level: 3,
                    channels: 16,
                },
                PyramidLevel {
                    level: 4,
                    channels: 32,
                },
                PyramidLevel {
                    level: 5,
                    channels: 64,
                },
            ],
        }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let Some(first) = self.levels.first() else {
            return Err(ModelError::Shape("empty pyramid".into()));
        };
        if first.level == 0 {
            return Err(ModelError::Shape(
                "first level must have stride >= 2".into(),
            ));
        }
        for pair in self.levels.windows(2) {
            if pair[1].level != pair[0].level + 1 {
                return Err(ModelError::Shape(
                    "pyramid levels must be consecutive".into(),
                ));
            }
        }
        if self.levels.iter().any(|l| l.channels == 0) {
            return Err(ModelError::Shape("zero channel width".into()));
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        self.levels.last().map_or(1, PyramidLevel::stride)
    }

    pub fn level_ids(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.level).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    down: Conv2d,
    block: ResidualBlock,
}

/// Seeded toy backbone producing one map per pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    spec: PyramidSpec,
    in_channels: usize,
    stem: Vec<Conv2d>,
    stages: Vec<Stage>,
}

impl Backbone {
    pub fn seeded(spec: PyramidSpec, in_channels: usize, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        if !(1..=3).contains(&in_channels) {
            return Err(ModelError::Shape(format!(
                "backbone takes 1-3 input channels, got {in_channels}"
            )));
        }
        let mut rng = seeded(seed, STREAM_BACKBONE);
        let first = spec.levels[0];
        let mut stem = Vec::new();
        let mut c = in_channels;
        for _ in 1..first.level {
            stem.push(Conv2d::seeded(c, first.channels, 3, 2, &mut rng));
            c = first.channels;
        }
        let mut stages = Vec::new();
        for lvl in &spec.levels {
            let down = Conv2d::seeded(c, lvl.channels, 3, 2, &mut rng);
            let block = ResidualBlock::seeded(lvl.channels, &mut rng);
            stages.push(Stage { down, block });
            c = lvl.channels;
        }
        Ok(Self {
            spec,
            in_channels,
            stem,
            stages,
        })
    }

    pub fn spec(&self) -> &PyramidSpec {
        &self.spec
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<Vec<FeatureMap>, ModelError> {
        let m = self.spec.max_stride();
        if image.channels != self.in_channels {
            return Err(ModelError::Shape(format!(
                "expected {} input channels, got {}",
                self.in_channels, image.channels
            )));
        }
        if image.height == 0
            || !image.height.is_multiple_of(m)
            || !image.width.is_multiple_of(m)
            || image.width == 0
        {
            return Err(ModelError::Shape(format!(
                "input {}x{} is not a positive multiple of {m}",
                image.height, image.width
            )));
        }
        let mut x = image.clone();
        for conv in &self.stem {
            x = conv.forward(&x)?.relu();
        }
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.block.forward(&stage.down.forward(&x)?.relu())?;
            outs.push(x.clone());
        }
        Ok(outs)
    }
}

/// C2..C5 for `image` under the default toy pyramid.
pub fn backbone_forward(image: &FeatureMap, seed: u64) -> Result<Vec<FeatureMap>, ModelError> {
    Backbone::seeded(PyramidSpec::default(), image.channels, seed)?.forward(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsample {
    #[default]
    Nearest,
    Bilinear,
}

pub fn upsample2x(map: &FeatureMap, mode: Upsample) -> FeatureMap {
    let (c, h, w) = map.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(c, oh, ow);
    let src_coord = |d: usize, n: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * 0.5 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let v = match mode {
                    Upsample::Nearest => map.get(ch, y / 2, x / 2),
                    Upsample::Bilinear => {
                        let (y0, y1, fy) = src_coord(y, h);
                        let (x0, x1, fx) = src_coord(x, w);
                        let top = map.get(ch, y0, x0) * (1.0 - fx) + map.get(ch, y0, x1) * fx;
                        let bot = map.get(ch, y1, x0) * (1.0 - fx) + map.get(ch, y1, x1) * fx;
                        top * (1.0 - fy) + bot * fy
                    }
                };
                out.set(ch, y, x, v);
            }
        }
    }
    out
}

/// Top-down pyramid: `P_last = lateral(C_last)`,
/// `P_k = lateral(C_k) + upsample(P_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fpn {
    laterals: Vec<Conv2d>,
    upsample: Upsample,
}

impl Fpn {
    pub fn seeded(in_channels: &[usize], lateral_channels: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, STREAM_FPN);
        let laterals = in_channels
            .iter()
            .map(|&c| Conv2d::seeded(c, lateral_channels, 1, 1, &mut rng))
            .collect();
        Self {
            laterals,
            upsample: Upsample::Nearest,
        }
    }

    pub fn from_laterals(laterals: Vec<Conv2d>, upsample: Upsample) -> Result<Self, ModelError> {
        let Some(first) = laterals.first() else {
            return Err(ModelError::Shape("no lateral convolutions".into()));
        };
        let out = first.out_channels;
        if laterals
            .iter()
            .any(|l| l.out_channels != out || l.kernel != 1 || l.stride != 1)
        {
            return Err(ModelError::Shape(
                "laterals must be 1x1 with equal widths".into(),
            ));
        }
        Ok(Self { laterals, upsample })
    }

    pub fn with_upsample(mut self, mode: Upsample) -> Self {
        self.upsample = mode;
        self
    }

    pub fn forward(&self, c_maps: &[FeatureMap]) -> Result<Vec<FeatureMap>, ModelError> {
        if c_maps.len() != self.laterals.len() {
            return Err(ModelError::Shape(format!(
                "expected {} pyramid levels, got {}",
                self.laterals.len(),
                c_maps.len()
            )));
        }
        for pair in c_maps.windows(2) {
            if pair[0].height != 2 * pair[1].height || pair[0].width != 2 * pair[1].width {
                return Err(ModelError::Shape(format!(
                    "level {}x{} is not twice {}x{}",
                    pair[0].height, pair[0].width, pair[1].height, pair[1].width
                )));
            }
        }
        let n = c_maps.len();
        let mut out: Vec<FeatureMap> = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let mut p = self.laterals[k].forward(&c_maps[k])?;
            if let Some(coarser) = out.last() {
                p.add_assign(&upsample2x(coarser, self.upsample));
            }
            out.push(p);
        }
        out.reverse();
        Ok(out)
    }
}

/// P2..P5 from C2..C5 with seeded 1x1 laterals and nearest upsampling.
pub fn fpn_fuse(
    c_maps: &[FeatureMap],
    lateral_channels: usize,
    seed: u64,
) -> Result<Vec<FeatureMap>, ModelError> {
    let widths: Vec<usize> = c_maps.iter().map(FeatureMap::channels).collect();
    Fpn::seeded(&widths, lateral_channels, seed).forward(c_maps)
}

/// Shared per-level head: 3x3 conv + relu, then sibling 1x1 convs for
/// objectness (sigmoid) and eight-coordinate deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnHead {
    conv: Conv2d,
    cls: Conv2d,
    reg: Conv2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnOutput {
    /// `num_shapes` channels, values in (0, 1).
    pub objectness: FeatureMap,
    /// `8 * num_shapes` channels; channel `8 * k + j` is delta `j` of shape `k`.
    pub deltas: FeatureMap,
}

impl RpnHead {
    pub fn seeded(in_channels: usize, num_shapes: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, STREAM_RPN);
        Self {
            conv: Conv2d::seeded(in_channels, in_channels, 3, 1, &mut rng),
            cls: Conv2d::seeded(in_channels, num_shapes, 1, 1, &mut rng),
            reg: Conv2d::seeded(in_channels, 8 * num_shapes, 1, 1, &mut rng),
        }
    }

    pub fn forward(&self, p_map: &FeatureMap) -> Result<RpnOutput, ModelError> {
        let hidden = self.conv.forward(p_map)?.relu();
        let objectness = self
            .cls
            .forward(&hidden)?
            .map_inplace(|v| 1.0 / (1.0 + (-v).exp()));
        let deltas = self.reg.forward(&hidden)?;
        Ok(RpnOutput { objectness, deltas })
    }
}

pub fn rpn_head(p_map: &FeatureMap, num_shapes: usize, seed: u64) -> Result<RpnOutput, ModelError> {
    RpnHead::seeded(p_map.channels, num_shapes, seed).forward(p_map)
}

/// Summed smooth-L1 over the eight components of `pred - target`, with
/// its gradient with respect to `pred`.
pub fn smooth_l1(pred: &Delta8, target: &Delta8) -> (f64, Delta8) {
    let mut loss = 0.0;
    let mut grad = Delta8::ZERO;
    for k in 0..8 {
        let d = pred[k] - target[k];
        if d.abs() < 1.0 {
            loss += 0.5 * d * d;
            grad[k] = d;
        } else {
            loss += d.abs() - 0.5;
            grad[k] = d.signum();
        }
    }
    (loss, grad)
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), ModelError> {
    if logits.len() < 2 || label >= logits.len() {
        return Err(ModelError::Index {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn noise(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = seeded(seed, 99);
        let data = (0..c * h * w)
            .map(|_| uniform(&mut rng, 0.0, 1.0))
            .collect();
        FeatureMap::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn conv_same_padding_and_stride() {
        let x = noise(2, 7, 9, 0);
        let mut rng = seeded(1, 1);
        let c1 = Conv2d::seeded(2, 3, 3, 1, &mut rng);
        assert_eq!(c1.forward(&x).unwrap().shape(), (3, 7, 9));
        let c2 = Conv2d::seeded(2, 3, 3, 2, &mut rng);
        assert_eq!(c2.forward(&x).unwrap().shape(), (3, 4, 5));
    }

    #[test]
    fn conv_matches_naive_loop() {
        let x = noise(2, 6, 5, 3);
        let mut rng = seeded(4, 1);
        for stride in [1, 2] {
            let conv = Conv2d::seeded(2, 2, 3, stride, &mut rng);
            let y = conv.forward(&x).unwrap();
            for oc in 0..2 {
                for oy in 0..y.height() {
                    for ox in 0..y.width() {
                        let mut acc = 0.0;
                        for ic in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 6 || ix >= 5 {
                                        continue;
                                    }
                                    acc += conv.weight[((oc * 2 + ic) * 3 + ky) * 3 + kx]
                                        * x.get(ic, iy as usize, ix as usize);
                                }
                            }
                        }
                        assert!((acc - y.get(oc, oy, ox)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn weights_within_fan_in_bound() {
        let mut rng = seeded(5, 0);
        let conv = Conv2d::seeded(4, 4, 3, 1, &mut rng);
        let bound = 1.0 / 36f64.sqrt();
        assert!(conv.weight.iter().all(|w| w.abs() <= bound));
        assert!(conv.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn backbone_shapes() {
        let outs = backbone_forward(&noise(1, 64, 96, 1), 7).unwrap();
        let shapes: Vec<_> = outs.iter().map(FeatureMap::shape).collect();
        assert_eq!(
            shapes,
            vec![(8, 16, 24), (16, 8, 12), (32, 4, 6), (64, 2, 3)]
        );
        let tiny = backbone_forward(&noise(3, 32, 32, 1), 7).unwrap();
        assert_eq!(tiny[3].shape(), (64, 1, 1));
    }

    #[test]
    fn backbone_rejects_bad_sizes() {
        assert!(matches!(
            backbone_forward(&noise(1, 48, 64, 1), 0),
            Err(ModelError::Shape(_))
        ));
        assert!(backbone_forward(&noise(4, 32, 32, 1), 0).is_err());
    }

    #[test]
    fn backbone_deterministic() {
        let img = noise(1, 64, 64, 2);
        assert_eq!(
            backbone_forward(&img, 11).unwrap(),
            backbone_forward(&img, 11).unwrap()
        );
        assert_ne!(
            backbone_forward(&img, 11).unwrap(),
            backbone_forward(&img, 12).unwrap()
        );
    }

    #[test]
    fn nearest_upsample_replicates() {
        let m = FeatureMap::from_vec(1, 1, 1, vec![3.5]).unwrap();
        assert_eq!(upsample2x(&m, Upsample::Nearest).data(), &[3.5; 4]);
        assert_eq!(upsample2x(&m, Upsample::Bilinear).data(), &[3.5; 4]);
    }

    #[test]
    fn bilinear_interpolates() {
        let m = FeatureMap::from_vec(1, 1, 2, vec![0.0, 4.0]).unwrap();
        assert_eq!(
            upsample2x(&m, Upsample::Bilinear).data()[..4],
            [0.0, 1.0, 3.0, 4.0]
        );
    }

    #[test]
    fn identity_lateral_zero_input_passes_through() {
        let c5 = noise(4, 2, 2, 5);
        let maps = vec![
            FeatureMap::zeros(4, 16, 16),
            FeatureMap::zeros(4, 8, 8),
            FeatureMap::zeros(4, 4, 4),
            c5.clone(),
        ];
        let fpn = Fpn::from_laterals(vec![Conv2d::identity(4); 4], Upsample::Nearest).unwrap();
        let p = fpn.forward(&maps).unwrap();
        assert_eq!(p[3], c5);
        for k in 0..3 {
            assert_eq!(p[k], upsample2x(&p[k + 1], Upsample::Nearest));
        }
    }

    #[test]
    fn fpn_inconsistent_pyramid() {
        let maps = vec![noise(2, 8, 8, 0), noise(2, 3, 4, 0)];
        assert!(matches!(fpn_fuse(&maps, 4, 0), Err(ModelError::Shape(_))));
    }

    #[test]
    fn fpn_causality() {
        let cs = backbone_forward(&noise(1, 64, 64, 3), 1).unwrap();
        let p = fpn_fuse(&cs, DEFAULT_LATERAL_CHANNELS, 2).unwrap();
        let mut zeroed = cs.clone();
        zeroed[0] = FeatureMap::zeros(cs[0].channels(), cs[0].height(), cs[0].width());
        let q = fpn_fuse(&zeroed, DEFAULT_LATERAL_CHANNELS, 2).unwrap();
        assert_eq!(p[1..], q[1..]);
        assert_ne!(p[0], q[0]);
        assert!(p.iter().all(|m| m.channels() == DEFAULT_LATERAL_CHANNELS));
    }

    #[test]
    fn rpn_head_shapes_and_zero_input() {
        let out = rpn_head(&noise(16, 8, 8, 1), 25, 3).unwrap();
        assert_eq!(out.objectness.shape(), (25, 8, 8));
        assert_eq!(out.deltas.shape(), (200, 8, 8));
        assert!(out.objectness.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let zero = rpn_head(&FeatureMap::zeros(16, 4, 4), 25, 3).unwrap();
        assert!(zero.objectness.data().iter().all(|&v| v == 0.5));
        assert_eq!(rpn_head(&noise(16, 8, 8, 1), 25, 3).unwrap(), out);
    }

    #[test]
    fn smooth_l1_values() {
        let (l, g) = smooth_l1(&Delta8::ZERO, &Delta8::ZERO);
        assert_eq!((l, g), (0.0, Delta8::ZERO));
        let mut p = Delta8::ZERO;
        p[3] = 0.5;
        assert_eq!(smooth_l1(&p, &Delta8::ZERO).0, 0.125);
        p[3] = 2.0;
        let (l, g) = smooth_l1(&p, &Delta8::ZERO);
        assert_eq!(l, 1.5);
        assert_eq!(g[3], 1.0);
        p[3] = -3.0;
        assert_eq!(smooth_l1(&p, &Delta8::ZERO).1[3], -1.0);
    }

    #[test]
    fn smooth_l1_c1_at_kink() {
        let f = |d: f64| {
            let mut p = Delta8::ZERO;
            p[0] = d;
            smooth_l1(&p, &Delta8::ZERO).0
        };
        let h = 1e-6;
        let left = (f(1.0) - f(1.0 - h)) / h;
        let right = (f(1.0 + h) - f(1.0)) / h;
        assert!((left - right).abs() < 1e-4);
        assert!((f(1.0 - 1e-12) - f(1.0 + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn softmax_ce_values() {
        let (l, g) = softmax_ce(&[0.3, 0.3], 1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
        let (l, _) = softmax_ce(&[1000.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-12);
        assert_eq!(
            softmax_ce(&[1.0, 2.0], 2),
            Err(ModelError::Index {
                label: 2,
                classes: 2
            })
        );
        assert!(softmax_ce(&[1.0], 0).is_err());
    }
}
