//! Portable graymap images, ASCII (`P2`) and binary (`P5`), 8 or 16 bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Grayscale image with integer samples in `0..=maxval`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if maxval == 0 {
            return Err(Error::invalid("maxval must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{} pixels", width * height),
                format!("{}", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(Error::invalid(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(GrayImage {
            width,
            height,
            maxval,
            data,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// `height x width` matrix of samples divided by `maxval`.
    pub fn to_unit_matrix(&self) -> DenseMatrix {
        let scale = f64::from(self.maxval);
        DenseMatrix::from_fn(self.height, self.width, |i, j| f64::from(self.get(i, j)) / scale)
    }

    /// Clamps to `[0, 1]` and rounds to the nearest level.
    pub fn from_unit_matrix(x: &DenseMatrix, maxval: u16) -> Result<Self> {
        let scale = f64::from(maxval);
        let data = x
            .to_row_major()
            .into_iter()
            .map(|v| {
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                (v * scale).round() as u16
            })
            .collect();
        GrayImage::new(x.cols(), x.rows(), maxval, data)
    }

    /// Binary `P5` encoding.
    pub fn to_p5(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            for &v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    /// ASCII `P2` encoding.
    pub fn to_p2(&self) -> String {
        let mut out = format!("P2\n{} {}\n{}\n", self.width, self.height, self.maxval);
        for row in self.data.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&[u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("invalid {what} {:?}", String::from_utf8_lossy(tok)))
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token().ok_or("empty file")?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => return Err(format!("unsupported magic {:?}", String::from_utf8_lossy(other))),
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err("image dimensions must be positive".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let count = width.checked_mul(height).ok_or("image too large")?;
    let mut data = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err("missing whitespace after maxval".into());
        }
        let raster = &bytes[cur.pos + 1..];
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        if raster.len() < count * width_bytes {
            return Err(format!(
                "raster truncated: expected {} bytes, found {}",
                count * width_bytes,
                raster.len()
            ));
        }
        if width_bytes == 1 {
            data.extend(raster[..count].iter().map(|&b| u16::from(b)));
        } else {
            data.extend(raster[..2 * count].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
        }
    } else {
        for k in 0..count {
            let v = cur.number("sample").map_err(|e| format!("pixel {k}: {e}"))?;
            if v > maxval {
                return Err(format!("pixel {k}: sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as u16);
        }
    }
    GrayImage::new(width, height, maxval as u16, data).map_err(|e| e.to_string())
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    decode(bytes).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, path)
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, image.to_p5()).map_err(|e| Error::io(path, e))
}
