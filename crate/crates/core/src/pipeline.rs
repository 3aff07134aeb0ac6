//! Glue between images, the network and detections.

use std::collections::HashMap;

use log::warn;
use vssa_autodiff::{softmax, Real, Tensor};

use crate::dataset::{Image, LabeledImage, Object};
use crate::detection::{
    decode, decode_and_nms, generate_anchors, iou, match_anchors, Anchor, BBox, Detection, NmsConfig, POSITIVE_IOU,
};
use crate::{Detector, Result};

/// Maps 8-bit RGB to `[-1, 1]` and stacks images into `[N, 3, H, W]`.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Tensor<T> {
    let (h, w) = (images[0].height, images[0].width);
    let plane = h * w;
    let mut data = vec![T::zero(); images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        assert_eq!((img.height, img.width), (h, w), "batch images must share a size");
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[(n * 3 + c) * plane + p] = T::of((px[c] as f64 - 127.5) / 127.5);
            }
        }
    }
    Tensor::new([images.len(), 3, h, w], data).expect("consistent batch shape")
}

/// Resizes an image to `size x size` and scales its boxes to match. Objects
/// narrower or shorter than one pixel afterwards are dropped with a warning;
/// `None` if that leaves a labeled image empty.
pub fn rescale(item: &LabeledImage, size: usize) -> Option<(Image, Vec<Object>)> {
    let (sx, sy) = (size as f64 / item.image.width as f64, size as f64 / item.image.height as f64);
    let mut objects = Vec::with_capacity(item.objects.len());
    for o in &item.objects {
        let b = o.bbox.scale(sx, sy);
        if b.width() < 1.0 || b.height() < 1.0 {
            warn!("{}: box {} degenerates at {size}x{size}; skipped", item.path.display(), o.bbox);
            continue;
        }
        objects.push(Object { class_id: o.class_id, bbox: b });
    }
    if objects.is_empty() && !item.objects.is_empty() {
        return None;
    }
    Some((item.image.resize(size, size), objects))
}

/// Anchors per input size, built on first use.
#[derive(Debug, Default)]
pub struct AnchorCache {
    cache: HashMap<(usize, [(usize, usize); 3]), Vec<Anchor>>,
}

impl AnchorCache {
    pub fn get(&mut self, input: usize, levels: [(usize, usize); 3]) -> Result<&[Anchor]> {
        if !self.cache.contains_key(&(input, levels)) {
            let anchors = generate_anchors(&levels, input)?;
            self.cache.insert((input, levels), anchors);
        }
        Ok(&self.cache[&(input, levels)])
    }
}

/// Splits one image's predictions `[M, C+5]` into probabilities and offsets.
pub fn split_predictions<T: Real>(rows: &[T], classes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = classes + 5;
    let m = rows.len() / k;
    let logits = Tensor::new([m, classes + 1], rows.chunks(k).flat_map(|r| r[..classes + 1].iter().map(|v| v.as_f64())).collect())?;
    let probs = softmax(&logits, 1)?.into_data();
    let deltas = rows.chunks(k).flat_map(|r| r[classes + 1..].iter().map(|v| v.as_f64())).collect();
    Ok((probs, deltas))
}

/// Detections for each image, in that image's own pixel coordinates.
pub fn detect<T: Real>(
    detector: &Detector<T>,
    images: &[&Image],
    input_size: usize,
    nms: &NmsConfig,
    anchors: &mut AnchorCache,
) -> Result<Vec<Vec<Detection>>> {
    let resized: Vec<Image> = images.iter().map(|i| i.resize(input_size, input_size)).collect();
    let refs: Vec<&Image> = resized.iter().collect();
    let batch = images_to_tensor::<T>(&refs);
    let (pred, levels) = detector.infer(&batch)?;
    let anchors = anchors.get(input_size, levels)?;
    let classes = detector.config.classes;
    let per_image = pred.len() / images.len();
    let side = input_size as f64;
    images
        .iter()
        .enumerate()
        .map(|(n, img)| {
            let (probs, deltas) = split_predictions(&pred.data()[n * per_image..(n + 1) * per_image], classes)?;
            let dets = decode_and_nms(&probs, &deltas, anchors, classes, (side, side), nms);
            let (sx, sy) = (img.width as f64 / side, img.height as f64 / side);
            Ok(dets
                .into_iter()
                .map(|d| Detection { bbox: d.bbox.scale(sx, sy), ..d })
                .filter(|d| d.bbox.is_valid())
                .collect())
        })
        .collect()
}

/// Mean IoU between each positive anchor's decoded box and the ground truth it
/// is matched to, at input size `input_size`. Measures box regression alone.
pub fn localization_iou<T: Real>(
    detector: &Detector<T>,
    items: &[LabeledImage],
    input_size: usize,
    anchors: &mut AnchorCache,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    let classes = detector.config.classes;
    for item in items {
        let Some((image, objects)) = rescale(item, input_size) else { continue };
        let (pred, levels) = detector.infer(&images_to_tensor::<T>(&[&image]))?;
        let anchors = anchors.get(input_size, levels)?;
        let boxes: Vec<BBox> = objects.iter().map(|o| o.bbox).collect();
        let labels: Vec<usize> = objects.iter().map(|o| o.class_id).collect();
        let side = input_size as f64;
        let m = match_anchors(anchors, &boxes, &labels, POSITIVE_IOU, (side, side))?;
        let (_, deltas) = split_predictions(pred.data(), classes)?;
        for (a, g) in m.assigned.iter().enumerate() {
            if let Some(g) = g {
                let d = &deltas[a * 4..a * 4 + 4];
                total += iou(&decode(&anchors[a].to_box(), &[d[0], d[1], d[2], d[3]]), &boxes[*g]);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Draws a one-pixel outline of `b`.
pub fn draw_box(img: &mut Image, b: &BBox, rgb: [u8; 3]) {
    let clip = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi.saturating_sub(1));
    let (x0, x1) = (clip(b.xmin, img.width), clip(b.xmax - 1.0, img.width));
    let (y0, y1) = (clip(b.ymin, img.height), clip(b.ymax - 1.0, img.height));
    for x in x0..=x1 {
        img.set_pixel(x, y0, rgb);
        img.set_pixel(x, y1, rgb);
    }
    for y in y0..=y1 {
        img.set_pixel(x0, y, rgb);
        img.set_pixel(x1, y, rgb);
    }
}
