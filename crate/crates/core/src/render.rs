//! Receptive-field tiles and binary PGM images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::coremath::Matrix;
use crate::error::{Error, Result};

/// Byte for a zero weight under symmetric scaling, and for constant tiles.
pub const MID_GRAY: u8 = 128;
/// Byte used for the separator pixels between tiles.
pub const GAP_GRAY: u8 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// −1 and below → 0, +1 and above → 255, linear in between; 0 → 128.
    SymmetricUnit,
    /// Each tile stretched from its own minimum to its own maximum.
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub gap: usize,
    pub scaling: Scaling,
}

impl TileGrid {
    /// Smallest near-square grid holding `count` tiles.
    pub fn for_count(count: usize, tile_h: usize, tile_w: usize, gap: usize, scaling: Scaling) -> Self {
        let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
        let rows = count.div_ceil(cols).max(1);
        TileGrid {
            rows,
            cols,
            tile_h,
            tile_w,
            gap,
            scaling,
        }
    }

    pub fn width(&self) -> usize {
        self.cols * self.tile_w + self.cols.saturating_sub(1) * self.gap
    }

    pub fn height(&self) -> usize {
        self.rows * self.tile_h + self.rows.saturating_sub(1) * self.gap
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, one byte per pixel.
    pub pixels: Vec<u8>,
}

fn symmetric_byte(w: f64) -> u8 {
    (w.clamp(-1.0, 1.0) * 127.5 + 127.5).round() as u8
}

/// One tile per row of `w`, placed row-major; unused cells and gaps are gray.
pub fn render_receptive_fields(w: &Matrix, grid: &TileGrid) -> Result<GrayImage> {
    let field = grid.tile_h * grid.tile_w;
    if w.ncols() != field {
        return Err(Error::shape(
            "receptive field length",
            format!("{}x{}={field}", grid.tile_h, grid.tile_w),
            w.ncols(),
        ));
    }
    if w.nrows() > grid.rows * grid.cols {
        return Err(Error::Config(format!(
            "{}x{} grid cannot hold {} fields",
            grid.rows,
            grid.cols,
            w.nrows()
        )));
    }
    let (width, height) = (grid.width(), grid.height());
    let mut pixels = vec![GAP_GRAY; width * height];
    for (t, fieldrow) in w.rows().into_iter().enumerate() {
        let (lo, hi) = fieldrow
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let top = (t / grid.cols) * (grid.tile_h + grid.gap);
        let left = (t % grid.cols) * (grid.tile_w + grid.gap);
        for (i, &v) in fieldrow.iter().enumerate() {
            let byte = match grid.scaling {
                Scaling::SymmetricUnit => symmetric_byte(v),
                Scaling::MinMax if hi > lo => ((v - lo) / (hi - lo) * 255.0).round() as u8,
                Scaling::MinMax => MID_GRAY,
            };
            let (r, c) = (i / grid.tile_w, i % grid.tile_w);
            pixels[(top + r) * width + left + c] = byte;
        }
    }
    Ok(GrayImage { width, height, pixels })
}

pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height || img.width == 0 || img.height == 0 {
        return Err(Error::Format(format!(
            "cannot encode {}x{} image from {} bytes",
            img.width,
            img.height,
            img.pixels.len()
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    Ok(out)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(img)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads the binary PGM layout written by [`write_pgm`] (comments unsupported).
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |why: &str| Error::Format(format!("bad PGM: {why}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let payload = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if payload.len() != width * height {
        return Err(bad("raster length does not match dimensions"));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: payload.to_vec(),
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}
