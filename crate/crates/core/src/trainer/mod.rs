//! Optimizer, multi-scale training loop and checkpoints.

mod checkpoint;
mod config;
mod sgd;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssa_autodiff::Tape;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{parse_key_values, TrainConfig, TRAIN_KEYS};
pub use sgd::{Sgd, SgdConfig};

use crate::dataset::{Image, LabeledImage};
use crate::detection::{match_anchors, multibox_loss, BBox, MatchResult, POSITIVE_IOU};
use crate::pipeline::{images_to_tensor, rescale, AnchorCache};
use crate::{Detector, Error, Result};

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub loss: f64,
    pub classification: f64,
    pub localization: f64,
    pub positives: usize,
    pub input_size: usize,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub detector: Detector<f32>,
    pub sgd: Sgd<f32>,
    pub iteration: u64,
    pub history: Vec<StepRecord>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    anchors: AnchorCache,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let detector = Detector::new(config.model(), config.seed)?;
        Ok(Self::with_detector(config, detector))
    }

    pub fn with_detector(config: TrainConfig, detector: Detector<f32>) -> Self {
        let sgd = Sgd::new(config.sgd(), &detector.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
        Trainer { config, detector, sgd, iteration: 0, history: Vec::new(), rng, order: Vec::new(), cursor: 0, anchors: AnchorCache::default() }
    }

    /// Resumes parameters, momentum and the iteration counter from a checkpoint.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.detector.load_params(ckpt.params())?;
        if let Some(m) = ckpt.momentum(&self.detector.params) {
            self.sgd.set_velocity(m)?;
        }
        self.iteration = ckpt.iteration();
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.detector, Some(self.sgd.velocity()), self.iteration, &self.config.to_text())
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Loss and gradients for a prepared batch at one input size.
    pub fn loss_and_grads(&mut self, images: &[&Image], objects: &[Vec<crate::dataset::Object>]) -> Result<(StepRecord, Vec<vssa_autodiff::Tensor<f32>>)> {
        let size = images[0].width;
        let mut tape = Tape::new();
        let p = self.detector.params.bind(&mut tape, true);
        let x = tape.constant(images_to_tensor(images));
        let out = self.detector.forward(&mut tape, &p, x)?;
        let anchors = self.anchors.get(size, out.level_sizes)?;
        let side = size as f64;
        let matches: Vec<MatchResult> = objects
            .iter()
            .map(|objs| {
                let boxes: Vec<BBox> = objs.iter().map(|o| o.bbox).collect();
                let labels: Vec<usize> = objs.iter().map(|o| o.class_id).collect();
                match_anchors(anchors, &boxes, &labels, POSITIVE_IOU, (side, side))
            })
            .collect::<Result<_>>()?;
        let loss = multibox_loss(&mut tape, out.predictions, &matches, &self.config.loss())?;
        let value = tape.value(loss.loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteGradient(format!("loss is {value}")));
        }
        let mut grads = tape.backward(loss.loss)?;
        let g = p
            .vars()
            .iter()
            .zip(self.detector.params.iter())
            .map(|(&v, param)| grads.take(v).unwrap_or_else(|| vssa_autodiff::Tensor::zeros(param.value.shape().to_vec())))
            .collect();
        let norm = loss.parts.positives.max(1) as f64;
        let record = StepRecord {
            iteration: self.iteration,
            loss: value,
            classification: loss.parts.classification / norm,
            localization: loss.parts.localization / norm,
            positives: loss.parts.positives,
            input_size: size,
        };
        Ok((record, g))
    }

    /// Samples a batch and a scale, then takes one SGD step.
    pub fn step(&mut self, data: &[LabeledImage]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let sizes = self.config.input_sizes();
        let size = sizes[self.rng.gen_range(0..sizes.len())];
        let mut images = Vec::with_capacity(self.config.batch_size);
        let mut objects = Vec::with_capacity(self.config.batch_size);
        for i in self.next_indices(data.len()) {
            match rescale(&data[i], size) {
                Some((img, objs)) => {
                    images.push(img);
                    objects.push(objs);
                }
                None => warn!("{}: skipped at input size {size}", data[i].path.display()),
            }
        }
        if images.is_empty() {
            return Err(Error::Data(format!("every sample of the batch degenerates at input size {size}")));
        }
        let refs: Vec<&Image> = images.iter().collect();
        let (record, grads) = self.loss_and_grads(&refs, &objects)?;
        self.sgd.step(&mut self.detector.params, &grads)?;
        self.iteration += 1;
        debug!("iter {} size {} loss {:.5}", record.iteration, size, record.loss);
        self.history.push(record);
        Ok(record)
    }

    /// Runs `iterations` steps, calling `on_step` after each.
    pub fn train(&mut self, data: &[LabeledImage], iterations: usize, mut on_step: impl FnMut(&StepRecord)) -> Result<()> {
        for _ in 0..iterations {
            let r = self.step(data)?;
            on_step(&r);
        }
        Ok(())
    }
}

/// Trailing moving average of the loss history.
pub fn moving_average(history: &[StepRecord], window: usize) -> Vec<f64> {
    history
        .windows(window.max(1))
        .map(|w| w.iter().map(|r| r.loss).sum::<f64>() / w.len() as f64)
        .collect()
}
