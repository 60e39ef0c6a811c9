//! Grayscale PGM (P2 and P5) and PNG input and output.
//!
//! Pixels are read as gray levels `value / maxval` in `[0, 1]`; image row 0
//! is grid row `j = 0`.

use std::fs;
use std::path::Path;

use chinpaint_core::imaging::phase_to_gray8;
use chinpaint_core::{Field, Grid};

use crate::error::{CliError, CliResult};

/// Decoded grayscale raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major gray levels in `[0, 1]`.
    pub levels: Vec<f64>,
}

impl GrayImage {
    pub fn to_field(&self, grid: Grid) -> CliResult<Field> {
        Ok(Field::from_values(grid, self.levels.clone())?)
    }

    /// Fails unless the raster is `nx x ny`.
    pub fn check_dims(&self, path: &Path, nx: usize, ny: usize) -> CliResult<()> {
        if self.width != nx || self.height != ny {
            return Err(CliError::DimensionMismatch {
                path: path.to_path_buf(),
                width: self.width,
                height: self.height,
                nx,
                ny,
            });
        }
        Ok(())
    }
}

fn unsupported(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::UnsupportedFormat { path: path.to_path_buf(), reason: reason.into() }
}

/// Splits the PGM header into whitespace-separated tokens, skipping `#`
/// comments. Returns the tokens and the offset just past the single
/// whitespace byte that ends the header.
fn pgm_header(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from raster data
    if i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    Some((tokens, i))
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> CliResult<GrayImage> {
    let (head, offset) = pgm_header(bytes, 4).ok_or_else(|| unsupported(path, "truncated PGM header"))?;
    let parse = |s: &str, what: &str| -> CliResult<usize> {
        s.parse::<usize>().map_err(|_| unsupported(path, format!("bad PGM {what} '{s}'")))
    };
    let width = parse(&head[1], "width")?;
    let height = parse(&head[2], "height")?;
    let maxval = parse(&head[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(unsupported(path, "empty raster"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(unsupported(path, format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let raw: Vec<usize> = if head[0] == "P5" {
        let data = &bytes[offset..];
        if maxval < 256 {
            if data.len() < n {
                return Err(unsupported(path, "truncated P5 raster"));
            }
            data[..n].iter().map(|&b| b as usize).collect()
        } else {
            if data.len() < 2 * n {
                return Err(unsupported(path, "truncated P5 raster"));
            }
            data[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
        }
    } else {
        let text = String::from_utf8_lossy(&bytes[offset..]);
        let vals: Vec<usize> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| parse(t, "sample"))
            .collect::<CliResult<_>>()?;
        if vals.len() < n {
            return Err(unsupported(path, "truncated P2 raster"));
        }
        vals
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(unsupported(path, format!("sample {v} exceeds maxval {maxval}")));
    }
    let levels = raw.iter().map(|&v| v as f64 / maxval as f64).collect();
    Ok(GrayImage { width, height, levels })
}

fn decode_png(path: &Path, bytes: &[u8]) -> CliResult<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| unsupported(path, e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let levels = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => return Err(unsupported(path, format!("PNG must be grayscale, found {:?}", other.color()))),
    };
    Ok(GrayImage { width, height, levels })
}

/// Reads a PGM (P2 or P5) or grayscale PNG, detected from the file contents.
pub fn load_gray(path: &Path) -> CliResult<GrayImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(path, &bytes)
    } else {
        Err(unsupported(path, "expected PGM (P2/P5) or PNG"))
    }
}

/// Loads the damaged-region mask: gray `>= 0.5` marks a damaged pixel.
pub fn load_mask(path: &Path, nx: usize, ny: usize, grid: Grid) -> CliResult<Field> {
    let img = load_gray(path)?;
    img.check_dims(path, nx, ny)?;
    let mask = img.to_field(grid)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let damaged = mask.sum() as usize;
    if damaged == 0 || damaged == grid.len() {
        return Err(CliError::EmptyOrFullMask(path.to_path_buf()));
    }
    Ok(mask)
}

/// Binary (P5) PGM bytes of an 8-bit raster.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Writes `phi` as an 8-bit grayscale image; the format follows the
/// extension (`.png`, anything else is PGM).
pub fn write_phase_image(phi: &Field, m_star: f64, path: &Path) -> CliResult<()> {
    let g = phi.grid();
    let pixels = phase_to_gray8(phi, m_star);
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let io_err = |e| CliError::io(format!("writing {}", path.display()), e);
    if is_png {
        let buf = image::GrayImage::from_raw(g.nx() as u32, g.ny() as u32, pixels).expect("raster matches grid");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| io_err(std::io::Error::other(e.to_string())))
    } else {
        fs::write(path, encode_pgm(g.nx(), g.ny(), &pixels)).map_err(io_err)
    }
}
