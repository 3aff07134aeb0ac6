//! File formats and the synthetic scene generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssa::dataset::*;
use vssa::detection::BBox;

#[test]
fn thousand_random_objects_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut images = Vec::new();
    let mut total = 0;
    while total < 1000 {
        let k = rng.gen_range(0..6);
        let objects: Vec<Object> = (0..k)
            .map(|_| {
                let x: f64 = rng.gen_range(-1e3..1e3);
                let y: f64 = rng.gen::<f64>() * 1e-3;
                let bbox = BBox::new(x, y, x + rng.gen_range(1e-9..5e2), y + rng.gen_range(1e-6..1e6)).unwrap();
                Object { class_id: rng.gen_range(1..=3), bbox }
            })
            .collect();
        total += k;
        images.push(ImageAnnotations { image: format!("images/{:05}.ppm", images.len()).into(), objects });
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.txt");
    write_annotations(&path, &images).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), images);
}

#[test]
fn annotation_errors_carry_line_numbers() {
    let text = "# header\na.ppm 1 0 0 5 5\na.ppm 2 9 0 3 5\n";
    let err = parse_annotations(text, "t.txt").unwrap_err().to_string();
    assert!(err.contains("t.txt") && err.contains('3'), "{err}");
    for bad in ["a.ppm x 0 0 1 1", "a.ppm 1 0 0 1", "a.ppm 1 0 0 nan 1", "a.ppm 0 0 0 1 1"] {
        assert!(parse_annotations(bad, "b").is_err(), "{bad}");
    }
}

#[test]
fn random_images_round_trip_through_ppm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let img = Image::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap();
        assert_eq!(Image::from_ppm(&img.to_ppm()).unwrap(), img);
    }
}

#[test]
fn malformed_ppm_headers_are_rejected() {
    for bad in [&b""[..], b"P6", b"P6\n2 2\n", b"P6\n2 2\n65535\n", b"P5\n1 1\n255\n\0", b"P6\n-1 2\n255\n", b"P6\n0 2\n255\n"] {
        assert!(Image::from_ppm(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
    }
}

#[test]
fn generated_boxes_stay_inside_and_sized() {
    for seed in 0..100 {
        let spec = SceneSpec { seed, distractors: (0, 2), ..SceneSpec::default() };
        let s = generate_scene(&spec);
        let side = spec.width.min(spec.height) as f64;
        for o in &s.objects {
            let b = o.bbox;
            assert!(b.xmin >= 0.0 && b.ymin >= 0.0 && b.xmax <= spec.width as f64 && b.ymax <= spec.height as f64);
            assert!((1..=3).contains(&o.class_id));
            // rounding to whole pixels may shave or add one
            let size = b.width().max(b.height());
            assert!(size >= side * SIGN_SIZE_RANGE.0 - 1.0 && size <= side * SIGN_SIZE_RANGE.1 + 1.0, "seed {seed}: {size}");
        }
    }
}

#[test]
fn distractors_share_the_glyph_renderer() {
    // on a flat background, a distractor paints exactly the pixels of a
    // labeled sign with the same class and size
    let mut compared = 0;
    for seed in 0..60 {
        let s = generate_scene(&SceneSpec { seed, distractors: (2, 2), noise: 0, clutter: 0.0, ..SceneSpec::default() });
        let bg = s.image.pixel(0, 0);
        let patch = |b: &BBox| -> Vec<[u8; 3]> {
            let mut out = Vec::new();
            for y in b.ymin as usize..b.ymax as usize {
                for x in b.xmin as usize..b.xmax as usize {
                    out.push(s.image.pixel(x, y));
                }
            }
            out
        };
        let labeled: Vec<_> = s.placements.iter().filter(|p| p.labeled).collect();
        for d in s.placements.iter().filter(|p| !p.labeled) {
            assert!(d.pole.is_none());
            for l in labeled.iter().filter(|l| l.class_id == d.class_id && l.bbox.width() == d.bbox.width()) {
                assert!(l.pole.is_some());
                let (a, b) = (patch(&d.bbox), patch(&l.bbox));
                let mask = |v: &[[u8; 3]]| v.iter().map(|&p| p != bg).collect::<Vec<_>>();
                assert_eq!(mask(&a), mask(&b), "seed {seed}");
                assert_eq!(a, b, "seed {seed}");
                compared += 1;
            }
        }
    }
    assert!(compared > 0);
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec { width: 80, height: 80, seed: 12, ..SceneSpec::default() };
    write_dataset(dir.path(), &spec, 3, 2, false).unwrap();
    let train = load_split(dir.path(), "train").unwrap();
    let test = load_split(dir.path(), "test").unwrap();
    assert_eq!((train.len(), test.len()), (3, 2));
    let fresh = generate_samples(&spec, 5);
    for (item, s) in train.iter().chain(&test).zip(&fresh) {
        assert_eq!(item.image, s.image);
        assert_eq!(item.objects, s.objects);
    }
    // refuses to overwrite unless forced
    assert!(write_dataset(dir.path(), &spec, 3, 2, false).is_err());
    write_dataset(dir.path(), &spec, 1, 1, true).unwrap();
    assert_eq!(load_split(dir.path(), "train").unwrap().len(), 1);
}
