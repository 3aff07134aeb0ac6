//! The full detector: feature pyramid plus one prediction head per level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vssa_autodiff::{Real, Tape, Tensor, Var};

use crate::head::{ConvHead, LevelHead, Orientation, VssaHead};
use crate::mrfeature::{FeaturePyramid, MrFeature};
use crate::nn::{Bound, ParamStore};
use crate::{Error, Result};

/// Anchors per feature-map cell, one per aspect ratio.
pub const ANCHORS_PER_CELL: usize = 5;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub width: f64,
    pub classes: usize,
    pub orientation: Orientation,
    pub hidden: usize,
    pub capsule_p5: usize,
    pub capsule_p10: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 1.0,
            classes: 3,
            orientation: Orientation::Vertical,
            hidden: 64,
            capsule_p5: 3,
            capsule_p10: 4,
        }
    }
}

impl ModelConfig {
    /// Values per anchor: `C + 1` logits then 4 offsets.
    pub fn values_per_anchor(&self) -> usize {
        self.classes + 5
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("width multiplier must be positive, got {}", self.width)));
        }
        if self.classes == 0 || self.hidden == 0 || self.capsule_p5 == 0 || self.capsule_p10 == 0 {
            return Err(Error::Config("classes, hidden size and capsule sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[N, M, C+5]`, anchors ordered by level (fine to coarse), row, column, ratio.
    pub predictions: Var,
    /// `(H, W)` of the fine, mid and coarse levels.
    pub level_sizes: [(usize, usize); 3],
    /// Attention weights of every decode step of every sequence head.
    pub attention: Vec<Var>,
    pub pyramid: FeaturePyramid,
}

#[derive(Debug, Clone)]
pub struct Detector<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub features: MrFeature,
    /// Heads for p19, p10, p5.
    pub heads: [LevelHead; 3],
}

impl<T: Real> Detector<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let features = MrFeature::new(&mut params, config.width, &mut rng);
        let [c19, c10, c5] = features.pyramid_channels();
        let outputs = ANCHORS_PER_CELL * config.values_per_anchor();

        let p19 = LevelHead::Conv(ConvHead::new(&mut params, "head/p19", c19, outputs, &mut rng));
        let mut level = |name: &str, channels: usize, len: usize| -> Result<LevelHead> {
            Ok(match config.orientation {
                Orientation::None => LevelHead::Conv(ConvHead::new(&mut params, &format!("head/{name}"), channels, outputs, &mut rng)),
                o => LevelHead::Sequence(VssaHead::new(
                    &mut params,
                    &format!("vssa/{name}"),
                    channels,
                    config.hidden,
                    len,
                    o,
                    outputs,
                    &mut rng,
                )?),
            })
        };
        let p10 = level("p10", c10, config.capsule_p10)?;
        let p5 = level("p5", c5, config.capsule_p5)?;
        Ok(Detector { config, params, features, heads: [p19, p10, p5] })
    }

    /// Runs the network on `images: [N, 3, H, W]` with parameters bound as `p`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, images: Var) -> Result<ForwardOutput> {
        let pyramid = self.features.forward(tape, p, images)?;
        let n = tape.shape(images)[0];
        let k = self.config.values_per_anchor();
        let mut parts = Vec::with_capacity(3);
        let mut attention = Vec::new();
        let mut level_sizes = [(0, 0); 3];
        for (i, (head, map)) in self.heads.iter().zip(pyramid.fine_to_coarse()).enumerate() {
            let s = tape.shape(map);
            level_sizes[i] = (s[2], s[3]);
            let (rows, att) = head.forward(tape, p, map)?;
            attention.extend(att);
            let cells = level_sizes[i].0 * level_sizes[i].1;
            parts.push(tape.reshape(rows, &[n, cells * ANCHORS_PER_CELL, k])?);
        }
        let predictions = tape.concat(&parts, 1)?;
        Ok(ForwardOutput { predictions, level_sizes, attention, pyramid })
    }

    /// Forward pass on constant parameters; returns the `[N, M, C+5]` predictions.
    pub fn infer(&self, images: &Tensor<T>) -> Result<(Tensor<T>, [(usize, usize); 3])> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &p, x)?;
        Ok((tape.value(out.predictions).clone(), out.level_sizes))
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Real>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            params: self.params.cast(),
            features: self.features.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Replaces parameter values by name, checking that the sets and shapes agree exactly.
    pub fn load_params(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        let mut staged = Vec::with_capacity(tensors.len());
        for (name, value) in tensors {
            let id = self.params.find(&name).ok_or_else(|| Error::UnexpectedParam(name.clone()))?;
            let expected = self.params.get(id).value.shape();
            if value.shape() != expected {
                return Err(Error::ParamShape { name, found: value.shape().to_vec(), expected: expected.to_vec() });
            }
            seen[id.index()] = true;
            staged.push((id, value));
        }
        if let Some(missing) = self.params.iter().zip(&seen).find(|(_, &s)| !s) {
            return Err(Error::MissingParam(missing.0.name.clone()));
        }
        for (id, value) in staged {
            self.params.get_mut(id).value = value;
        }
        Ok(())
    }
}
