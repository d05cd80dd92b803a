//! Fixed-size tiling of raw inspection images and reassembly of per-tile
//! values into full-resolution maps.

use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer has {} samples, expected {height}*{width}*{channels}",
                pixels.len()
            )));
        }
        Ok(RawImage {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Copy of the `h`x`w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<RawImage> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w}+{y0}+{x0} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut out = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            out.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        RawImage::new(h, w, c, out)
    }

    /// Gray images are replicated into three channels; RGB is returned as is.
    pub fn to_rgb(&self) -> RawImage {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        RawImage {
            height: self.height,
            width: self.width,
            channels: 3,
            pixels,
        }
    }

    pub fn load_png(path: &Path) -> Result<RawImage> {
        Self::decode_png(&io::read(path)?)
    }

    /// Decodes PNG (or any enabled codec) bytes; gray stays one channel,
    /// everything else becomes RGB.
    pub fn decode_png(bytes: &[u8]) -> Result<RawImage> {
        Ok(Self::from_dynamic(image::load_from_memory(bytes)?))
    }

    fn from_dynamic(img: DynamicImage) -> RawImage {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color() {
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => RawImage {
                height: h,
                width: w,
                channels: 1,
                pixels: img.into_luma8().into_raw(),
            },
            _ => RawImage {
                height: h,
                width: w,
                channels: 3,
                pixels: img.into_rgb8().into_raw(),
            },
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::codecs::png::PngEncoder::new(Cursor::new(&mut buf)).write_image(
            &self.pixels,
            self.width as u32,
            self.height as u32,
            color,
        )?;
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.encode_png()?)
    }
}

/// One grid cell of a divided raw image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitImage {
    pub side: usize,
    pub row: usize,
    pub col: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub source_id: String,
}

impl UnitImage {
    pub fn new(
        source_id: impl Into<String>,
        row: usize,
        col: usize,
        side: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if pixels.len() != side * side * channels {
            return Err(Error::InvalidArgument(format!(
                "unit image buffer has {} samples, expected {side}^2*{channels}",
                pixels.len()
            )));
        }
        Ok(UnitImage {
            side,
            row,
            col,
            channels,
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn from_raw(source_id: impl Into<String>, img: &RawImage) -> Result<Self> {
        if img.height() != img.width() {
            return Err(Error::InvalidArgument(format!(
                "unit images are square, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Self::new(
            source_id,
            0,
            0,
            img.height(),
            img.channels(),
            img.pixels().to_vec(),
        )
    }

    pub fn to_raw(&self) -> RawImage {
        RawImage {
            height: self.side,
            width: self.side,
            channels: self.channels,
            pixels: self.pixels.clone(),
        }
    }

    /// Ordering key used for deterministic tie-breaks.
    pub fn key(&self) -> (&str, usize, usize) {
        (&self.source_id, self.row, self.col)
    }

    /// Planar (channel-major) floats in [0, 1].
    pub fn planar_f32(&self) -> Vec<f32> {
        let plane = self.side * self.side;
        let mut out = vec![0.0f32; plane * self.channels];
        for (i, px) in self.pixels.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = f32::from(v) / 255.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TilePolicy {
    /// Bilinearly enlarge each dimension to the next multiple of the side.
    ScaleUp,
    /// Keep only full tiles anchored at the top-left corner.
    DropPartial,
}

impl std::str::FromStr for TilePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scaleup" | "scale-up" => Ok(TilePolicy::ScaleUp),
            "droppartial" | "drop-partial" => Ok(TilePolicy::DropPartial),
            other => Err(Error::InvalidArgument(format!("unknown tile policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub side: usize,
    pub policy: TilePolicy,
    pub effective_height: usize,
    pub effective_width: usize,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_side(side: usize) -> Result<()> {
    if side < 8 {
        return Err(Error::InvalidArgument(format!(
            "tile side must be at least 8, got {side}"
        )));
    }
    Ok(())
}

/// Enlarges each dimension to the smallest multiple of `side` that is not
/// smaller than it, with bilinear resampling (pixel-centre aligned). A
/// dimension that already is a multiple keeps its samples exactly.
pub fn scale_to_multiple(img: &RawImage, side: usize) -> Result<RawImage> {
    check_side(side)?;
    let th = img.height.div_ceil(side) * side;
    let tw = img.width.div_ceil(side) * side;
    Ok(resize_bilinear(img, th, tw))
}

/// Bilinear resampling with half-pixel centres. Identity when sizes match.
pub fn resize_bilinear(img: &RawImage, th: usize, tw: usize) -> RawImage {
    if th == img.height && tw == img.width {
        return img.clone();
    }
    let c = img.channels;
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f32 / out_len as f32;
        (0..out_len)
            .map(|o| {
                if out_len == in_len {
                    return (o, o, 0.0);
                }
                let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, src - i0 as f32)
            })
            .collect()
    };
    let ys = taps(th, img.height);
    let xs = taps(tw, img.width);
    let mut out = vec![0u8; th * tw * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let p00 = f32::from(img.get(y0, x0, ch));
                let p01 = f32::from(img.get(y0, x1, ch));
                let p10 = f32::from(img.get(y1, x0, ch));
                let p11 = f32::from(img.get(y1, x1, ch));
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                let v = top + (bot - top) * fy;
                out[(oy * tw + ox) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RawImage {
        height: th,
        width: tw,
        channels: c,
        pixels: out,
    }
}

/// Cuts `img` into `side`-pixel square tiles, emitted row-major.
pub fn tile(
    img: &RawImage,
    source_id: &str,
    side: usize,
    policy: TilePolicy,
) -> Result<(TileGrid, Vec<UnitImage>)> {
    check_side(side)?;
    let work;
    let src = match policy {
        TilePolicy::ScaleUp => {
            work = scale_to_multiple(img, side)?;
            &work
        }
        TilePolicy::DropPartial => {
            if img.height < side || img.width < side {
                return Err(Error::TooSmall {
                    height: img.height,
                    width: img.width,
                    side,
                });
            }
            img
        }
    };
    let rows = src.height / side;
    let cols = src.width / side;
    let grid = TileGrid {
        rows,
        cols,
        side,
        policy,
        effective_height: rows * side,
        effective_width: cols * side,
    };
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let cell = src.crop(r * side, c * side, side, side)?;
            tiles.push(UnitImage::new(
                source_id,
                r,
                c,
                side,
                src.channels,
                cell.into_pixels(),
            )?);
        }
    }
    Ok((grid, tiles))
}

/// Inverse of [`tile`] for the covered region: pastes tiles back in place.
pub fn stitch(grid: &TileGrid, tiles: &[UnitImage]) -> Result<RawImage> {
    if tiles.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} cells but {} tiles were given",
            grid.len(),
            tiles.len()
        )));
    }
    let channels = tiles.first().map_or(1, |t| t.channels);
    let mut out = RawImage::filled(grid.effective_height, grid.effective_width, channels, 0)?;
    let side = grid.side;
    for t in tiles {
        if t.side != side || t.channels != channels || t.row >= grid.rows || t.col >= grid.cols {
            return Err(Error::InvalidArgument(format!(
                "tile ({}, {}) does not fit the grid",
                t.row, t.col
            )));
        }
        for y in 0..side {
            let dst = ((t.row * side + y) * grid.effective_width + t.col * side) * channels;
            let srcs = y * side * channels;
            out.pixels[dst..dst + side * channels]
                .copy_from_slice(&t.pixels[srcs..srcs + side * channels]);
        }
    }
    Ok(out)
}

/// Maps `value` from `[lo, hi]` to an 8-bit level, rounding half up.
pub fn quantize(value: f64, lo: f64, hi: f64) -> u8 {
    let t = (value - lo) / (hi - lo);
    (t * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Expands one scalar per grid cell into a single-channel image of the
/// effective grid dimensions, mapping `range` affinely onto `[0, 255]`.
pub fn reassemble(grid: &TileGrid, values: &[f64], range: (f64, f64)) -> Result<RawImage> {
    if values.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} values for a {}x{} grid, got {}",
            grid.len(),
            grid.rows,
            grid.cols,
            values.len()
        )));
    }
    if range.1.partial_cmp(&range.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidArgument(format!(
            "value range [{}, {}] is empty",
            range.0, range.1
        )));
    }
    let levels: Vec<u8> = values.iter().map(|&v| quantize(v, range.0, range.1)).collect();
    let (h, w) = (grid.effective_height, grid.effective_width);
    let mut px = vec![0u8; h * w];
    for y in 0..h {
        let r = y / grid.side;
        for x in 0..w {
            px[y * w + x] = levels[r * grid.cols + x / grid.side];
        }
    }
    RawImage::new(h, w, 1, px)
}

/// One record of a tile manifest: `source_id,row,col,relative_path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileRecord {
    pub source_id: String,
    pub row: usize,
    pub col: usize,
    pub relative_path: String,
}

pub fn format_tile_manifest(records: &[TileRecord]) -> String {
    let mut s = String::from("source_id,row,col,relative_path\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.source_id, r.row, r.col, r.relative_path
        ));
    }
    s
}

pub fn parse_tile_manifest(text: &str) -> Result<Vec<TileRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("source_id") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Format(format!(
                "tile manifest line {}: expected 4 fields, got {}",
                i + 1,
                parts.len()
            )));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("tile manifest line {}: bad index `{s}`", i + 1)))
        };
        out.push(TileRecord {
            source_id: parts[0].to_string(),
            row: num(parts[1])?,
            col: num(parts[2])?,
            relative_path: parts[3].to_string(),
        });
    }
    Ok(out)
}
