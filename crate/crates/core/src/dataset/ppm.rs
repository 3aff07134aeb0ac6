//! Binary PPM (P6, maxval 255) images.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!("{}x{} image needs {} bytes, got {}", width, height, width * height * 3, data.len())));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Image { width, height, data: rgb.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Nearest-neighbour resize.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let mut out = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                out.extend_from_slice(&self.pixel(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        Image { width, height, data: out }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        match fields[0].as_str() {
            "P6" => {}
            "P3" => return Err(Error::Format("ASCII PPM (P3) is not supported; expected binary P6".into())),
            other => return Err(Error::Format(format!("not a binary PPM: magic `{other}`"))),
        }
        let num = |i: usize, what: &str| -> Result<usize> {
            fields[i].parse().map_err(|_| Error::Format(format!("bad PPM {what} `{}`", fields[i])))
        };
        let (width, height, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
        if maxval != 255 {
            return Err(Error::Format(format!("PPM maxval {maxval} unsupported (need 255)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("empty {width}x{height} PPM")));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let need = width * height * 3;
        let body = bytes.get(pos..).unwrap_or(&[]);
        if body.len() < need {
            return Err(Error::Format(format!("PPM raster truncated: {} of {need} bytes", body.len())));
        }
        Image::new(width, height, body[..need].to_vec())
    }
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::from_ppm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.to_ppm()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_blue_byte_layout() {
        let img = Image::new(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        let bytes = img.to_ppm();
        assert_eq!(&bytes[bytes.len() - 6..], &[0xFF, 0, 0, 0, 0, 0xFF]);
        assert_eq!(Image::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ascii_variant_is_rejected() {
        let err = Image::from_ppm(b"P3\n1 1\n255\n0 0 0\n").unwrap_err();
        assert!(err.to_string().contains("P3"), "{err}");
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = Image::from_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn truncated_raster_is_a_format_error() {
        assert!(matches!(Image::from_ppm(b"P6\n2 2\n255\nabc"), Err(Error::Format(_))));
        assert!(matches!(Image::from_ppm(b"P6\n2"), Err(Error::Format(_))));
    }

    #[test]
    fn resize_identity_and_halving() {
        let img = Image::new(2, 2, (0..12).collect()).unwrap();
        assert_eq!(img.resize(2, 2), img);
        assert_eq!(img.resize(1, 1).data.len(), 3);
    }
}
