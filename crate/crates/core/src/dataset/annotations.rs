//! Text annotations: `<image_path> <class_id> <xmin> <ymin> <xmax> <ymax>` per
//! object. A line holding only a path lists an image without objects; `#`
//! starts a comment.

use std::fs;
use std::path::Path;

use crate::detection::BBox;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Object {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Objects of one image, images in first-seen order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageAnnotations {
    pub image: String,
    pub objects: Vec<Object>,
}

pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<ImageAnnotations>> {
    let mut out: Vec<ImageAnnotations> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: source.to_string(), line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let image = fields[0].to_string();
        let entry = match out.iter().position(|a| a.image == image) {
            Some(p) => p,
            None => {
                out.push(ImageAnnotations { image, objects: Vec::new() });
                out.len() - 1
            }
        };
        match fields.len() {
            1 => continue,
            6 => {}
            n => return Err(err(format!("expected 1 or 6 fields, found {n}"))),
        }
        let class_id: usize = fields[1].parse().map_err(|_| err(format!("bad class id `{}`", fields[1])))?;
        if class_id == 0 {
            return Err(err("class id 0 is reserved for background".into()));
        }
        let mut c = [0.0f64; 4];
        for (slot, f) in c.iter_mut().zip(&fields[2..]) {
            *slot = f.parse().map_err(|_| err(format!("bad coordinate `{f}`")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite coordinate `{f}`")));
            }
        }
        if c[2] <= c[0] || c[3] <= c[1] {
            return Err(err(format!("degenerate box: xmax {} <= xmin {} or ymax {} <= ymin {}", c[2], c[0], c[3], c[1])));
        }
        out[entry].objects.push(Object { class_id, bbox: BBox { xmin: c[0], ymin: c[1], xmax: c[2], ymax: c[3] } });
    }
    Ok(out)
}

pub fn format_annotations(images: &[ImageAnnotations]) -> String {
    let mut s = String::new();
    for a in images {
        if a.objects.is_empty() {
            s.push_str(&a.image);
            s.push('\n');
        }
        for o in &a.objects {
            let b = o.bbox;
            s.push_str(&format!("{} {} {} {} {} {}\n", a.image, o.class_id, b.xmin, b.ymin, b.xmax, b.ymax));
        }
    }
    s
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<ImageAnnotations>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn write_annotations(path: impl AsRef<Path>, images: &[ImageAnnotations]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_annotations(images)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_object_line() {
        let a = parse_annotations("img1.ppm 2 10 12 40 44\n", "t").unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].objects, vec![Object { class_id: 2, bbox: BBox { xmin: 10.0, ymin: 12.0, xmax: 40.0, ymax: 44.0 } }]);
    }

    #[test]
    fn comment_only_file_is_empty() {
        assert!(parse_annotations("# nothing here\n\n   # still nothing\n", "t").unwrap().is_empty());
    }

    #[test]
    fn inverted_box_reports_line() {
        let err = parse_annotations("# header\na.ppm 1 0 0 5 5\na.ppm 1 9 0 5 5\n", "train.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn image_without_objects_round_trips() {
        let a = vec![ImageAnnotations { image: "empty.ppm".into(), objects: vec![] }];
        assert_eq!(parse_annotations(&format_annotations(&a), "t").unwrap(), a);
    }
}
