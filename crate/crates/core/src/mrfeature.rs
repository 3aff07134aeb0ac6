//! Multi-resolution conv-deconv feature network.
//!
//! A MobileNet-style backbone (one full conv, thirteen depthwise-separable
//! blocks, six of them stride 2) yields maps at strides 16, 32 and 64. Two
//! densely connected deconvolution layers then fuse them:
//!
//! ```text
//! dcd1 = proj([s32 ; deconv(s64)])
//! dcd2 = proj([s16 ; deconv(dcd1) ; deconv(deconv(s64))])
//! ```
//!
//! Each concatenation is L2-normalized per location and rescaled by a
//! learnable per-channel factor before a 1x1 projection and ReLU. The pyramid
//! handed to the detection heads is `(s64, dcd1, dcd2)`, i.e. 5x5, 10x10 and
//! 19x19 at a 300x300 input.

use rand::Rng;
use vssa_autodiff::{Padding, Real, Tape, Tensor, Var};

use crate::nn::{glorot_uniform, scaled_channels, Bound, ConvBlock, ParamId, ParamStore, SeparableBlock};
use crate::{Error, Result};

/// Smallest input side that still has a stride-64 stage.
pub const MIN_INPUT: usize = 64;

/// (output channels, stride) of the thirteen separable blocks at width 1.0.
const SEPARABLE_ROWS: [(usize, usize); 13] = [
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (1024, 2),
    (1024, 2),
];

/// Backbone outputs by stride.
#[derive(Debug, Clone, Copy)]
pub struct BackboneStages {
    pub s8: Var,
    pub s16: Var,
    pub s32: Var,
    pub s64: Var,
}

/// The three maps used for detection, finest last.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    /// Stride 64 (coarse).
    pub p5: Var,
    /// Stride 32, first fused layer.
    pub p10: Var,
    /// Stride 16, second fused layer.
    pub p19: Var,
}

impl FeaturePyramid {
    /// Maps ordered fine to coarse.
    pub fn fine_to_coarse(&self) -> [Var; 3] {
        [self.p19, self.p10, self.p5]
    }
}

/// Expected `(H, W)` of the fine, mid and coarse pyramid levels for an input.
pub fn pyramid_sizes(height: usize, width: usize) -> [(usize, usize); 3] {
    [16, 32, 64].map(|s| (height.div_ceil(s), width.div_ceil(s)))
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub conv1: ConvBlock,
    pub blocks: Vec<SeparableBlock>,
}

impl Backbone {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, width: f64, rng: &mut R) -> Self {
        let c1 = scaled_channels(32, width);
        let conv1 = ConvBlock::new(store, "backbone/conv1", 3, c1, 3, 2, rng);
        let mut in_ch = c1;
        let blocks = SEPARABLE_ROWS
            .iter()
            .enumerate()
            .map(|(i, &(out, stride))| {
                let out = scaled_channels(out, width);
                let block = SeparableBlock::new(store, &format!("backbone/dc{}", i + 1), in_ch, out, stride, rng);
                in_ch = out;
                block
            })
            .collect();
        Backbone { conv1, blocks }
    }

    /// Channels of the (s16, s32, s64) stages.
    pub fn stage_channels(&self) -> (usize, usize, usize) {
        (self.blocks[10].out_channels, self.blocks[11].out_channels, self.blocks[12].out_channels)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<BackboneStages> {
        let [_, c, h, w] = tape.value(image).dims4("backbone")?;
        if c != 3 {
            return Err(Error::Config(format!("backbone expects 3-channel images, got {c}")));
        }
        if h.min(w) < MIN_INPUT {
            return Err(Error::Config(format!(
                "input {h}x{w} is too small for a stride-64 stage (minimum side {MIN_INPUT})"
            )));
        }
        let mut x = self.conv1.forward(tape, p, image)?;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(tape, p, x)?;
            taps.push(x);
        }
        Ok(BackboneStages { s8: taps[4], s16: taps[10], s32: taps[11], s64: taps[12] })
    }
}

#[derive(Debug, Clone)]
struct Deconv {
    weight: ParamId,
    bias: ParamId,
}

impl Deconv {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Deconv {
            weight: store.add(format!("{name}/weight"), glorot_uniform(&[c_in, c_out, 3, 3], c_in * 9, c_out * 9, rng), true),
            bias: store.add(format!("{name}/bias"), Tensor::zeros([c_out]), false),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, like: Var) -> Result<Var> {
        let s = tape.shape(like);
        let target = (s[2], s[3]);
        Ok(tape.conv_transpose2d(x, p.var(self.weight), Some(p.var(self.bias)), 2, target)?)
    }
}

/// L2-normalize, learnable rescale, 1x1 projection, ReLU.
#[derive(Debug, Clone)]
struct FuseProject {
    norm_scale: ParamId,
    weight: ParamId,
    bias: ParamId,
}

/// Initial value of the post-normalization channel scale.
pub const L2_SCALE_INIT: f64 = 20.0;

impl FuseProject {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        FuseProject {
            norm_scale: store.add(format!("{name}/l2_scale"), Tensor::full([c_in], T::of(L2_SCALE_INIT)), false),
            weight: store.add(format!("{name}/proj_weight"), glorot_uniform(&[c_out, c_in, 1, 1], c_in, c_out, rng), true),
            bias: store.add(format!("{name}/proj_bias"), Tensor::zeros([c_out]), false),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, parts: &[Var]) -> Result<Var> {
        let cat = tape.concat(parts, 1)?;
        let unit = tape.l2_normalize(cat)?;
        let scaled = tape.channel_affine(unit, Some(p.var(self.norm_scale)), None)?;
        let y = tape.conv2d(scaled, p.var(self.weight), Some(p.var(self.bias)), 1, Padding::Same)?;
        Ok(tape.relu(y))
    }
}

/// The two densely connected deconvolution layers.
#[derive(Debug, Clone)]
pub struct Fusion {
    dcd1_up: Deconv,
    dcd1_fuse: FuseProject,
    dcd2_up_dcd1: Deconv,
    dcd2_up_s64_first: Deconv,
    dcd2_up_s64_second: Deconv,
    dcd2_fuse: FuseProject,
    pub dcd_channels: usize,
}

impl Fusion {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        stage_channels: (usize, usize, usize),
        width: f64,
        rng: &mut R,
    ) -> Self {
        let (c16, c32, c64) = stage_channels;
        let dcd = scaled_channels(512, width);
        let half = scaled_channels(256, width);
        Fusion {
            dcd1_up: Deconv::new(store, "fusion/dcd1/up_s64", c64, dcd, rng),
            dcd1_fuse: FuseProject::new(store, "fusion/dcd1", c32 + dcd, dcd, rng),
            dcd2_up_dcd1: Deconv::new(store, "fusion/dcd2/up_dcd1", dcd, half, rng),
            dcd2_up_s64_first: Deconv::new(store, "fusion/dcd2/up_s64_a", c64, half, rng),
            dcd2_up_s64_second: Deconv::new(store, "fusion/dcd2/up_s64_b", half, half, rng),
            dcd2_fuse: FuseProject::new(store, "fusion/dcd2", c16 + 2 * half, dcd, rng),
            dcd_channels: dcd,
        }
    }

    /// `proj([s32 ; deconv(s64)])`.
    pub fn build_dcd1<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, stages: &BackboneStages) -> Result<Var> {
        let up = self.dcd1_up.forward(tape, p, stages.s64, stages.s32)?;
        self.dcd1_fuse.forward(tape, p, &[stages.s32, up])
    }

    /// `proj([s16 ; deconv(dcd1) ; deconv(deconv(s64))])`.
    pub fn build_dcd2<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, stages: &BackboneStages, dcd1: Var) -> Result<Var> {
        let from_dcd1 = self.dcd2_up_dcd1.forward(tape, p, dcd1, stages.s16)?;
        let mid = self.dcd2_up_s64_first.forward(tape, p, stages.s64, stages.s32)?;
        let from_s64 = self.dcd2_up_s64_second.forward(tape, p, mid, stages.s16)?;
        self.dcd2_fuse.forward(tape, p, &[stages.s16, from_dcd1, from_s64])
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, stages: &BackboneStages) -> Result<FeaturePyramid> {
        let dcd1 = self.build_dcd1(tape, p, stages)?;
        let dcd2 = self.build_dcd2(tape, p, stages, dcd1)?;
        Ok(FeaturePyramid { p5: stages.s64, p10: dcd1, p19: dcd2 })
    }
}

/// Backbone plus fusion.
#[derive(Debug, Clone)]
pub struct MrFeature {
    pub backbone: Backbone,
    pub fusion: Fusion,
}

impl MrFeature {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, width: f64, rng: &mut R) -> Self {
        let backbone = Backbone::new(store, width, rng);
        let fusion = Fusion::new(store, backbone.stage_channels(), width, rng);
        MrFeature { backbone, fusion }
    }

    /// Channels of (p19, p10, p5).
    pub fn pyramid_channels(&self) -> [usize; 3] {
        let (_, _, c64) = self.backbone.stage_channels();
        [self.fusion.dcd_channels, self.fusion.dcd_channels, c64]
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<FeaturePyramid> {
        let stages = self.backbone.forward(tape, p, image)?;
        self.fusion.forward(tape, p, &stages)
    }
}
