//! Depth and pose networks.
//!
//! The depth network is a residual encoder with a U-shaped decoder emitting
//! disparities at four scales. The pose network encodes a stacked frame pair
//! with the same encoder topology (six input channels); its deepest map is
//! the *unit stream*. A cascade of bottlenecks (IDCE) turns the unit stream
//! of `(I_{t−1}, I_t)` into a cue that is added to the depth encoder's
//! deepest map, and the pose decoder refines its last feature map with the
//! attention module before regressing a 6-DoF motion.

pub mod layers;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tensor, Var};
use crate::camgeom::{DepthMap, DepthRange, PoseSE3, PoseVars};
use crate::error::{invalid, shape_err, Result};
use crate::ham::{ham_forward, HamParams, DEFAULT_DELTA};
use crate::kittidata::{FrameSample, SourceRole};
use layers::{Conv2d, ConvBn, ConvSpec, Init, Mode, ParamBuilder, ParamStore, Session};

/// Scale applied to the raw pose regression outputs.
pub const POSE_SCALE: f64 = 0.01;
const INPUT_MEAN: f64 = 0.45;
const INPUT_STD: f64 = 0.225;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Channels of the stem and the four residual stages.
    pub encoder_widths: [usize; 5],
    /// Decoder channels from the finest to the coarsest level.
    pub decoder_widths: [usize; 5],
    pub pose_width: usize,
    /// `(height, width)`.
    pub input_resolution: (usize, usize),
    pub num_scales: usize,
    pub depth_range: DepthRange,
    pub toy_mode: bool,
    pub use_idce: bool,
    pub use_ham: bool,
    pub ham_delta: f64,
    pub idce_blocks: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetConfig {
    pub fn full() -> Self {
        Self {
            encoder_widths: [64, 64, 128, 256, 512],
            decoder_widths: [16, 32, 64, 128, 256],
            pose_width: 256,
            input_resolution: (192, 640),
            num_scales: 4,
            depth_range: DepthRange::default(),
            toy_mode: false,
            use_idce: true,
            use_ham: true,
            ham_delta: DEFAULT_DELTA,
            idce_blocks: 4,
        }
    }

    pub fn toy(height: usize, width: usize) -> Self {
        Self {
            encoder_widths: [8, 16, 32, 64, 128],
            decoder_widths: [4, 8, 16, 32, 64],
            pose_width: 64,
            input_resolution: (height, width),
            toy_mode: true,
            ..Self::full()
        }
    }

    /// The configuration without the cue bridge and without attention.
    pub fn baseline(&self) -> Self {
        Self { use_idce: false, use_ham: false, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_resolution;
        if h < 64 || w < 64 || h % 32 != 0 || w % 32 != 0 {
            return Err(invalid(format!("input resolution {h}x{w} must be a multiple of 32 and at least 64")));
        }
        if self.num_scales != 4 {
            return Err(invalid("the decoder emits exactly four scales"));
        }
        if self.encoder_widths[4] % 4 != 0 {
            return Err(invalid("deepest encoder width must be divisible by 4"));
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) || self.pose_width == 0 {
            return Err(invalid("widths must be positive"));
        }
        self.depth_range.validate()
    }
}

/// Two 3×3 convolutions with an identity or projected shortcut.
#[derive(Clone, Debug, PartialEq)]
struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn build(b: &mut ParamBuilder, name: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        let spec = |ci, co, k| ConvSpec::new(ci, co, k).init(Init::KaimingFanOut);
        b.scoped(name, |b| BasicBlock {
            conv1: ConvBn::build(b, "conv1", spec(c_in, c_out, 3).stride(stride), true),
            conv2: ConvBn::build(b, "conv2", spec(c_out, c_out, 3), false),
            shortcut: (stride != 1 || c_in != c_out)
                .then(|| ConvBn::build(b, "downsample", spec(c_in, c_out, 1).stride(stride), false)),
        })
    }

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let y = self.conv1.forward(s, x);
        let y = self.conv2.forward(s, y);
        let skip = match &self.shortcut {
            Some(p) => p.forward(s, x),
            None => x,
        };
        let sum = s.g.add(y, skip);
        s.g.relu(sum)
    }
}

/// Feature maps from the stem (stride 2) down to the deepest stage (stride 32).
pub type FeaturePyramid = Vec<Var>;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualEncoder {
    in_channels: usize,
    stem: ConvBn,
    stages: Vec<[BasicBlock; 2]>,
}

impl ResidualEncoder {
    pub fn build(b: &mut ParamBuilder, name: &str, in_channels: usize, widths: [usize; 5]) -> Self {
        b.scoped(name, |b| {
            let stem = ConvBn::build(
                b,
                "stem",
                ConvSpec::new(in_channels, widths[0], 7).stride(2).init(Init::KaimingFanOut),
                true,
            );
            let stages = (1..5)
                .map(|k| {
                    let stride = if k == 1 { 1 } else { 2 };
                    b.scoped(&format!("layer{k}"), |b| {
                        [
                            BasicBlock::build(b, "0", widths[k - 1], widths[k], stride),
                            BasicBlock::build(b, "1", widths[k], widths[k], 1),
                        ]
                    })
                })
                .collect();
            ResidualEncoder { in_channels, stem, stages }
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<FeaturePyramid> {
        let c = s.g.shape(x)[1];
        if c != self.in_channels {
            return Err(shape_err(format!("encoder expects {} channels, got {c}", self.in_channels)));
        }
        let centered = s.g.add_scalar(x, -INPUT_MEAN);
        let normed = s.g.mul_scalar(centered, 1.0 / INPUT_STD);
        let mut feats = Vec::with_capacity(5);
        let stem = self.stem.forward(s, normed);
        feats.push(stem);
        let mut y = s.g.max_pool(stem, 3, 2, 1);
        for stage in &self.stages {
            for block in stage {
                y = block.forward(s, y);
            }
            feats.push(y);
        }
        Ok(feats)
    }
}

/// Residual bottleneck: 1×1 reduce to a quarter, 3×3, 1×1 restore, each
/// followed by normalization and ReLU, added to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub reduce: ConvBn,
    pub spatial: ConvBn,
    pub restore: ConvBn,
}

impl Bottleneck {
    pub fn build(b: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        if channels % 4 != 0 || channels == 0 {
            return Err(invalid(format!("bottleneck channels {channels} not divisible by 4")));
        }
        let inner = channels / 4;
        let spec = |ci, co, k| ConvSpec::new(ci, co, k).init(Init::KaimingFanOut);
        Ok(b.scoped(name, |b| Bottleneck {
            reduce: ConvBn::build(b, "reduce", spec(channels, inner, 1), true),
            spatial: ConvBn::build(b, "spatial", spec(inner, inner, 3), true),
            restore: ConvBn::build(b, "restore", spec(inner, channels, 1), true),
        }))
    }

    /// The residual branch alone.
    pub fn branch(&self, s: &mut Session<'_>, x: Var) -> Var {
        let y = self.reduce.forward(s, x);
        let y = self.spatial.forward(s, y);
        self.restore.forward(s, y)
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let y = self.branch(s, x);
        s.g.add(x, y)
    }
}

/// Bottleneck cascade plus a 1×1 projection producing the depth cue.
#[derive(Clone, Debug, PartialEq)]
pub struct Idce {
    pub blocks: Vec<Bottleneck>,
    pub cue_projection: Conv2d,
}

impl Idce {
    pub fn build(b: &mut ParamBuilder, name: &str, channels: usize, blocks: usize) -> Result<Self> {
        b.scoped(name, |b| {
            let blocks = (0..blocks)
                .map(|k| Bottleneck::build(b, &format!("block{k}"), channels))
                .collect::<Result<Vec<_>>>()?;
            let cue_projection =
                Conv2d::build(b, "cue", ConvSpec::new(channels, channels, 1).init(Init::Normal(1e-3)));
            Ok(Idce { blocks, cue_projection })
        })
    }

    pub fn cascade(&self, s: &mut Session<'_>, x: Var) -> Var {
        self.blocks.iter().fold(x, |y, blk| blk.forward(s, y))
    }

    pub fn forward(&self, s: &mut Session<'_>, unit_stream: Var) -> Var {
        let y = self.cascade(s, unit_stream);
        self.cue_projection.forward(s, y)
    }
}

pub fn fuse(s: &mut Session<'_>, deep: Var, cue: Var) -> Result<Var> {
    if s.g.shape(deep) != s.g.shape(cue) {
        return Err(shape_err(format!("fuse {:?} with {:?}", s.g.shape(deep), s.g.shape(cue))));
    }
    Ok(s.g.add(deep, cue))
}

/// Bias of every disparity head at initialization. A sigmoid of about 0.1
/// puts the first predictions near depth 1 under the default depth range,
/// leaving room on both sides for near and far surfaces.
pub const INITIAL_DISPARITY_LOGIT: f64 = -2.2;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthDecoder {
    /// `(first, second)` convolutions per level, finest first.
    upconvs: Vec<(Conv2d, Conv2d)>,
    heads: Vec<Conv2d>,
}

impl DepthDecoder {
    pub fn build(b: &mut ParamBuilder, name: &str, enc: [usize; 5], dec: [usize; 5], num_scales: usize) -> Self {
        b.scoped(name, |b| {
            let conv = |ci, co| ConvSpec::new(ci, co, 3).reflect();
            let mut upconvs = Vec::with_capacity(5);
            for level in (0..5).rev() {
                let c_in = if level == 4 { enc[4] } else { dec[level + 1] };
                let first = Conv2d::build(b, &format!("upconv{level}_0"), conv(c_in, dec[level]));
                let skip = if level > 0 { enc[level - 1] } else { 0 };
                let second = Conv2d::build(b, &format!("upconv{level}_1"), conv(dec[level] + skip, dec[level]));
                upconvs.push((first, second));
            }
            upconvs.reverse();
            let heads = (0..num_scales)
                .map(|k| {
                    let head = Conv2d::build(b, &format!("disp{k}"), conv(dec[k], 1));
                    let bias = head.bias.expect("disparity heads have a bias");
                    b.store.value_mut(bias).data_mut().fill(INITIAL_DISPARITY_LOGIT);
                    head
                })
                .collect();
            DepthDecoder { upconvs, heads }
        })
    }

    /// Disparities in `(0, 1)`, finest first.
    pub fn forward(&self, s: &mut Session<'_>, feats: &[Var]) -> Result<Vec<Var>> {
        if feats.len() != 5 {
            return Err(shape_err(format!("decoder needs 5 feature maps, got {}", feats.len())));
        }
        let mut x = feats[4];
        let mut disps = vec![None; self.heads.len()];
        for level in (0..5).rev() {
            let (first, second) = &self.upconvs[level];
            let y = first.forward(s, x);
            let y = s.g.elu(y);
            let y = s.g.upsample_nearest(y, 2);
            let y = if level > 0 { s.g.concat(&[y, feats[level - 1]], 1) } else { y };
            let y = second.forward(s, y);
            x = s.g.elu(y);
            if let Some(head) = self.heads.get(level) {
                let d = head.forward(s, x);
                disps[level] = Some(s.g.sigmoid(d));
            }
        }
        Ok(disps.into_iter().map(|d| d.expect("every scale decoded")).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseDecoder {
    squeeze: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
    pub ham: HamParams,
    head: Conv2d,
}

impl PoseDecoder {
    pub fn build(b: &mut ParamBuilder, name: &str, c_in: usize, width: usize, delta: f64) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(PoseDecoder {
                squeeze: Conv2d::build(b, "squeeze", ConvSpec::new(c_in, width, 1)),
                conv1: Conv2d::build(b, "conv1", ConvSpec::new(width, width, 3)),
                conv2: Conv2d::build(b, "conv2", ConvSpec::new(width, width, 3)),
                ham: HamParams::build(b, "ham", width, delta)?,
                head: Conv2d::build(b, "head", ConvSpec::new(width, 6, 1)),
            })
        })
    }

    /// Returns `(axis-angle N×3, translation N×3)`.
    pub fn forward(&self, s: &mut Session<'_>, unit_stream: Var, use_ham: bool) -> Result<(Var, Var)> {
        let y = self.squeeze.forward(s, unit_stream);
        let y = s.g.relu(y);
        let y = self.conv1.forward(s, y);
        let y = s.g.relu(y);
        let y = self.conv2.forward(s, y);
        let mut y = s.g.relu(y);
        if use_ham {
            y = ham_forward(s, y, &self.ham)?;
        }
        let pooled = s.g.mean_axes(y, &[2, 3]);
        let out = self.head.forward(s, pooled);
        let n = s.g.shape(out)[0];
        let out = s.g.reshape(out, &[n, 6]);
        let out = s.g.mul_scalar(out, POSE_SCALE);
        let rot = s.g.narrow(out, 1, 0, 3);
        let trans = s.g.narrow(out, 1, 3, 3);
        Ok((rot, trans))
    }
}

/// Predicted motion for one temporal source.
#[derive(Clone, Copy, Debug)]
pub struct PosePrediction {
    pub role: SourceRole,
    /// Target-to-source transform used for warping.
    pub transform: PoseVars,
    pub axisangle: Var,
    pub translation: Var,
    /// Whether `transform` is the inverse of the raw regression.
    pub inverted: bool,
}

#[derive(Clone, Debug)]
pub struct JointOutput {
    pub disparities: Vec<Var>,
    pub poses: Vec<PosePrediction>,
    pub unit_stream: Option<Var>,
    pub cue: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthPoseNet {
    pub cfg: NetConfig,
    pub depth_encoder: ResidualEncoder,
    pub pose_encoder: ResidualEncoder,
    pub depth_decoder: DepthDecoder,
    pub pose_decoder: PoseDecoder,
    pub idce: Idce,
}

/// Network structure together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: DepthPoseNet,
    pub store: ParamStore,
}

impl Model {
    /// Every component is always allocated, in a fixed order, so the random
    /// stream and parameter names do not depend on which parts are enabled.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b = ParamBuilder::new(seed);
        let enc = cfg.encoder_widths;
        let depth_encoder = ResidualEncoder::build(&mut b, "depth_encoder", 3, enc);
        let pose_encoder = ResidualEncoder::build(&mut b, "pose_encoder", 6, enc);
        let depth_decoder = DepthDecoder::build(&mut b, "depth_decoder", enc, cfg.decoder_widths, cfg.num_scales);
        let pose_decoder = PoseDecoder::build(&mut b, "pose_decoder", enc[4], cfg.pose_width, cfg.ham_delta)?;
        let idce = Idce::build(&mut b, "idce", enc[4], cfg.idce_blocks)?;
        let net = DepthPoseNet { cfg: cfg.clone(), depth_encoder, pose_encoder, depth_decoder, pose_decoder, idce };
        Ok(Model { net, store: b.store })
    }

    pub fn session(&self, mode: Mode) -> Session<'_> {
        Session::new(&self.store, mode)
    }

    /// Names of the IDCE parameters.
    pub fn idce_prefix() -> &'static str {
        "idce."
    }
}

/// Converts sigmoid disparities to depth. The closed interval is accepted
/// because a saturated sigmoid rounds to exactly 0 or 1.
pub fn disparity_to_depth(disp: &Tensor, range: DepthRange) -> Result<DepthMap> {
    if let Some(bad) = disp.data().iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(invalid(format!("disparity {bad} outside [0, 1]")));
    }
    let (h, w) = (disp.dim(disp.rank() - 2), disp.dim(disp.rank() - 1));
    DepthMap::new(h, w, disp.data().iter().map(|&d| range.depth_of(d)).collect())
}

/// Batched network inputs. Images are `N×3×H×W`.
pub struct JointInput {
    pub target: Tensor,
    /// Temporal sources available to the pose network.
    pub prev: Option<Tensor>,
    pub next: Option<Tensor>,
}

impl JointInput {
    /// Stacks the network-facing images of `samples`. In evaluation a
    /// missing previous frame is replaced by the target.
    pub fn from_samples(samples: &[&FrameSample], evaluation: bool) -> Result<Self> {
        let first = samples.first().ok_or_else(|| invalid("empty batch"))?;
        let stack = |get: &dyn Fn(&FrameSample) -> Option<Tensor>| -> Option<Tensor> {
            let items: Option<Vec<Tensor>> = samples.iter().map(|s| get(s).map(|t| batch_one(&t))).collect();
            items.map(|v| Tensor::stack_batch(&v))
        };
        let target = stack(&|s: &FrameSample| Some(s.network_target().clone())).expect("targets present");
        let mut prev = stack(&|s: &FrameSample| s.network_source(SourceRole::Prev).cloned());
        let next = stack(&|s: &FrameSample| s.network_source(SourceRole::Next).cloned());
        if prev.is_none() && evaluation {
            prev = Some(target.clone());
        }
        if prev.is_none() && first.source(SourceRole::Prev).is_none() && next.is_none() {
            return Err(invalid("sample has no temporal source"));
        }
        Ok(Self { target, prev, next })
    }
}

pub(crate) fn batch_one(t: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(shape)
}

impl DepthPoseNet {
    pub fn depth_encoder(&self, s: &mut Session<'_>, image: Var) -> Result<FeaturePyramid> {
        self.check_resolution(s, image)?;
        self.depth_encoder.forward(s, image)
    }

    pub fn unit_stream_encoder(&self, s: &mut Session<'_>, pair: Var) -> Result<FeaturePyramid> {
        self.check_resolution(s, pair)?;
        self.pose_encoder.forward(s, pair)
    }

    fn check_resolution(&self, s: &Session<'_>, x: Var) -> Result<()> {
        let shape = s.g.shape(x);
        if shape.len() != 4 || (shape[2], shape[3]) != self.cfg.input_resolution {
            return Err(shape_err(format!(
                "input {:?} does not match resolution {:?}",
                shape, self.cfg.input_resolution
            )));
        }
        Ok(())
    }

    pub fn pose_head(&self, s: &mut Session<'_>, unit_stream: Var) -> Result<(Var, Var)> {
        self.pose_decoder.forward(s, unit_stream, self.cfg.use_ham)
    }

    /// Full forward pass: unit stream and cue from `(I_{t−1}, I_t)`, fused
    /// depth decoding, and one pose per temporal source.
    pub fn forward_joint(&self, s: &mut Session<'_>, input: &JointInput) -> Result<JointOutput> {
        let target = s.input(input.target.clone());
        let mut feats = self.depth_encoder(s, target)?;
        let n = input.target.dim(0);

        let mut pairs = Vec::new();
        if let Some(prev) = &input.prev {
            let p = s.input(prev.clone());
            pairs.push((SourceRole::Prev, s.g.concat(&[p, target], 1), false));
        }
        if let Some(next) = &input.next {
            let q = s.input(next.clone());
            pairs.push((SourceRole::Next, s.g.concat(&[target, q], 1), true));
        }
        if pairs.is_empty() {
            return Err(invalid("forward pass needs a temporal source"));
        }
        let stacked: Vec<Var> = pairs.iter().map(|p| p.1).collect();
        let batch = s.g.concat(&stacked, 0);
        let unit = self.unit_stream_encoder(s, batch)?;
        let deepest = unit[4];

        let mut unit_prev = None;
        let mut cue = None;
        if input.prev.is_some() {
            let u = s.g.narrow(deepest, 0, 0, n);
            unit_prev = Some(u);
            if self.cfg.use_idce {
                let c = self.idce.forward(s, u);
                feats[4] = fuse(s, feats[4], c)?;
                cue = Some(c);
            }
        }
        let disparities = self.depth_decoder.forward(s, &feats)?;

        let (rot_all, trans_all) = self.pose_head(s, deepest)?;
        let mut poses = Vec::with_capacity(pairs.len());
        for (k, (role, _, invert)) in pairs.iter().enumerate() {
            let axisangle = s.g.narrow(rot_all, 0, k * n, n);
            let translation = s.g.narrow(trans_all, 0, k * n, n);
            let raw = PoseVars::from_axisangle(&mut s.g, axisangle, translation);
            let transform = if *invert { raw.inverse(&mut s.g) } else { raw };
            poses.push(PosePrediction { role: *role, transform, axisangle, translation, inverted: *invert });
        }
        Ok(JointOutput { disparities, poses, unit_stream: unit_prev, cue })
    }
}

/// Converts raw pose regressions into a target-to-source transform.
pub fn prediction_to_pose(axisangle: &[f64], translation: &[f64], inverted: bool) -> PoseSE3 {
    let p = PoseSE3::new([axisangle[0], axisangle[1], axisangle[2]], [translation[0], translation[1], translation[2]]);
    if inverted { p.inverse() } else { p }
}
