//! Anchors, ground-truth matching, the multi-task loss, decoding and NMS.

mod anchors;
mod boxes;
mod loss;
mod matching;
mod nms;

pub use anchors::{generate_anchors, Anchor, ASPECT_RATIOS, MAX_SCALE, MIN_SCALE};
pub use boxes::{decode, encode, iou, BBox};
pub use loss::{multibox_loss, smooth_l1, smooth_l1_grad, LossConfig, LossOutput, LossParts};
pub use matching::{match_anchors, MatchResult, POSITIVE_IOU};
pub use nms::{decode_and_nms, greedy_nms, Detection, NmsConfig};
