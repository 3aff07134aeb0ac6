//! Synthetic road-side scenes.
//!
//! Signs are flat glyphs (red circle, yellow triangle, blue rectangle, each
//! with a white core). A true sign sits on a grey pole; a distractor is the
//! same glyph from the same renderer with no pole and is never labeled.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::annotations::Object;
use super::ppm::Image;
use crate::detection::BBox;

/// Number of sign archetypes.
pub const NUM_CLASSES: usize = 3;
/// Sign side as a fraction of the image side.
pub const SIGN_SIZE_RANGE: (f64, f64) = (0.06, 0.20);
const PLACEMENT_RETRIES: usize = 64;
const POLE_GREY: [u8; 3] = [70, 70, 80];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of labeled signs.
    pub signs: (usize, usize),
    /// Probability that a labeled sign stands on a pole.
    pub pole_rate: f64,
    /// Inclusive range of unlabeled look-alikes.
    pub distractors: (usize, usize),
    /// Background blocks per 100x100 pixels.
    pub clutter: f64,
    /// Amplitude of uniform per-pixel noise.
    pub noise: u8,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 300,
            height: 300,
            signs: (1, 3),
            pole_rate: 1.0,
            distractors: (0, 0),
            clutter: 2.0,
            noise: 12,
            seed: 0,
        }
    }
}

/// What was drawn where.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub class_id: usize,
    /// Bounding box of the painted glyph pixels.
    pub bbox: BBox,
    pub pole: Option<BBox>,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub objects: Vec<Object>,
    pub placements: Vec<Placement>,
}

fn class_color(class_id: usize) -> [u8; 3] {
    match class_id {
        1 => [220, 30, 30],
        2 => [240, 200, 20],
        _ => [30, 70, 220],
    }
}

/// Whether glyph pixel `(u, v)` of an `s x s` glyph is painted, and with the
/// inner colour.
fn glyph(class_id: usize, s: usize, u: usize, v: usize) -> Option<bool> {
    let (x, y, sf) = (u as f64 + 0.5, v as f64 + 0.5, s as f64);
    match class_id {
        1 => {
            let r = sf / 2.0;
            let d = ((x - r).powi(2) + (y - r).powi(2)).sqrt();
            (d <= r).then_some(d <= r * 0.55)
        }
        2 => {
            // apex at top centre, base along the bottom row
            let half = sf / 2.0 * y / sf;
            let dx = (x - sf / 2.0).abs();
            (dx <= half.max(0.5)).then(|| dx <= half * 0.45 && y > sf * 0.45 && y < sf * 0.9)
        }
        _ => {
            let m = sf * 0.22;
            Some(x > m && x < sf - m && y > m && y < sf - m)
        }
    }
}

fn overlaps(a: &BBox, b: &BBox, margin: f64) -> bool {
    a.xmin < b.xmax + margin && b.xmin < a.xmax + margin && a.ymin < b.ymax + margin && b.ymin < a.ymax + margin
}

fn fill_rect(img: &mut Image, b: &BBox, rgb: [u8; 3]) {
    for y in b.ymin as usize..(b.ymax as usize).min(img.height) {
        for x in b.xmin as usize..(b.xmax as usize).min(img.width) {
            img.set_pixel(x, y, rgb);
        }
    }
}

/// Renders one scene. The same spec always yields the same bytes.
pub fn generate_scene(spec: &SceneSpec) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let base: [u8; 3] = [rng.gen_range(60..140), rng.gen_range(90..170), rng.gen_range(60..140)];
    let mut image = Image::filled(w, h, base);

    let blocks = (spec.clutter * (w * h) as f64 / 10_000.0).round() as usize;
    for _ in 0..blocks {
        let bw = rng.gen_range(w / 20..=w / 4).max(1) as f64;
        let bh = rng.gen_range(h / 20..=h / 4).max(1) as f64;
        let x0 = rng.gen_range(0.0..w as f64 - bw).floor();
        let y0 = rng.gen_range(0.0..h as f64 - bh).floor();
        let rgb = [rng.gen_range(40..200), rng.gen_range(40..200), rng.gen_range(40..200)];
        fill_rect(&mut image, &BBox { xmin: x0, ymin: y0, xmax: x0 + bw, ymax: y0 + bh }, rgb);
    }
    if spec.noise > 0 {
        let n = spec.noise as i16;
        for v in image.data.iter_mut() {
            *v = (*v as i16 + rng.gen_range(-n..=n)).clamp(0, 255) as u8;
        }
    }

    let n_signs = rng.gen_range(spec.signs.0..=spec.signs.1.max(spec.signs.0));
    let n_distract = rng.gen_range(spec.distractors.0..=spec.distractors.1.max(spec.distractors.0));
    let side = w.min(h) as f64;
    let mut taken: Vec<BBox> = Vec::new();
    let mut placements = Vec::new();
    for k in 0..n_signs + n_distract {
        let labeled = k < n_signs;
        let class_id = rng.gen_range(1..=NUM_CLASSES);
        let with_pole = labeled && rng.gen_bool(spec.pole_rate.clamp(0.0, 1.0));
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let s = (rng.gen_range(SIGN_SIZE_RANGE.0..=SIGN_SIZE_RANGE.1) * side).round().max(3.0) as usize;
            let pole_len = if with_pole { (s as f64 * rng.gen_range(1.0..2.5)).round() as usize } else { 0 };
            if s >= w || s + pole_len >= h {
                continue;
            }
            let x0 = rng.gen_range(0..=w - s);
            let y0 = rng.gen_range(0..=h - s - pole_len);
            let frame = BBox { xmin: x0 as f64, ymin: y0 as f64, xmax: (x0 + s) as f64, ymax: (y0 + s + pole_len) as f64 };
            if taken.iter().any(|t| overlaps(t, &frame, 2.0)) {
                continue;
            }
            placed = Some((x0, y0, s, pole_len, frame));
            break;
        }
        let Some((x0, y0, s, pole_len, frame)) = placed else {
            warn!("scene {}: no room for object {} after {PLACEMENT_RETRIES} tries; skipped", spec.seed, k + 1);
            continue;
        };
        taken.push(frame);

        let (outer, inner) = (class_color(class_id), [245, 245, 245]);
        let (mut lo, mut hi) = ((usize::MAX, usize::MAX), (0, 0));
        for v in 0..s {
            for u in 0..s {
                if let Some(core) = glyph(class_id, s, u, v) {
                    image.set_pixel(x0 + u, y0 + v, if core { inner } else { outer });
                    lo = (lo.0.min(x0 + u), lo.1.min(y0 + v));
                    hi = (hi.0.max(x0 + u + 1), hi.1.max(y0 + v + 1));
                }
            }
        }
        let bbox = BBox { xmin: lo.0 as f64, ymin: lo.1 as f64, xmax: hi.0 as f64, ymax: hi.1 as f64 };
        let pole = (pole_len > 0).then(|| {
            let pw = (s / 8).max(2) as f64;
            let cx = (bbox.xmin + bbox.xmax) / 2.0;
            let p = BBox { xmin: (cx - pw / 2.0).floor(), ymin: bbox.ymax, xmax: (cx - pw / 2.0).floor() + pw, ymax: bbox.ymax + pole_len as f64 };
            fill_rect(&mut image, &p, POLE_GREY);
            p
        });
        placements.push(Placement { class_id, bbox, pole, labeled });
    }
    let objects = placements.iter().filter(|p| p.labeled).map(|p| Object { class_id: p.class_id, bbox: p.bbox }).collect();
    Sample { image, objects, placements }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let spec = SceneSpec { seed: 7, distractors: (1, 2), ..Default::default() };
        assert_eq!(generate_scene(&spec), generate_scene(&spec));
    }

    #[test]
    fn one_sign_no_distractors() {
        let spec = SceneSpec { signs: (1, 1), distractors: (0, 0), seed: 3, ..Default::default() };
        assert_eq!(generate_scene(&spec).objects.len(), 1);
    }

    #[test]
    fn poles_hang_below_signs() {
        for seed in 0..100 {
            let spec = SceneSpec { seed, distractors: (2, 3), ..Default::default() };
            for p in generate_scene(&spec).placements {
                assert_eq!(p.pole.is_some(), p.labeled);
                if let Some(pole) = p.pole {
                    assert!(pole.ymin >= p.bbox.ymax);
                }
            }
        }
    }

    #[test]
    fn labels_bound_the_painted_glyph() {
        let spec = SceneSpec { seed: 11, noise: 0, clutter: 0.0, distractors: (0, 0), ..Default::default() };
        let s = generate_scene(&spec);
        for o in &s.objects {
            let b = o.bbox;
            let colour = class_color(o.class_id);
            let (mut lo, mut hi) = ((usize::MAX, usize::MAX), (0, 0));
            for y in b.ymin as usize..b.ymax as usize {
                for x in b.xmin as usize..b.xmax as usize {
                    if s.image.pixel(x, y) == colour {
                        lo = (lo.0.min(x), lo.1.min(y));
                        hi = (hi.0.max(x + 1), hi.1.max(y + 1));
                    }
                }
            }
            assert_eq!((lo.0 as f64, lo.1 as f64, hi.0 as f64, hi.1 as f64), (b.xmin, b.ymin, b.xmax, b.ymax));
        }
    }
}
