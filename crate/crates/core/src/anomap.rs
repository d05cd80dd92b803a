//! Anomalous-feature maps: per-tile product of anomalous class mass and
//! normalised anomaly score, jet rendering, score histograms and montages.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imgrid::{RawImage, TileGrid, UnitImage};
use crate::nets::{ClassCatalog, ClassProbs};
use crate::ocsvm::AnomalyScore;

/// Legend labels show `t * DISPLAY_SCALE`.
pub const DISPLAY_SCALE: f64 = 100.0;

/// Jet anchors `(t, rgb)`; colours are linear between consecutive anchors.
pub const JET_ANCHORS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 255]),
    (0.25, [0, 255, 255]),
    (0.5, [0, 255, 0]),
    (0.75, [255, 255, 0]),
    (1.0, [255, 0, 0]),
];

pub const ANOMALOUS_SIDE_RGB: [u8; 3] = [150, 75, 0];
pub const NORMAL_SIDE_RGB: [u8; 3] = [0, 0, 255];

const RANGE_SLACK: f64 = 1e-6;

/// `norm_score · Σ_{a ∈ A} prob_a`, in [0, 1].
pub fn anomalous_feature(probs: &ClassProbs, score: &AnomalyScore, catalog: &ClassCatalog) -> Result<f64> {
    if catalog.anomalous.is_empty() {
        return Err(Error::Config("catalog has no anomalous classes".into()));
    }
    if probs.probs.len() != catalog.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probabilities for a {}-class catalog",
            probs.probs.len(),
            catalog.len()
        )));
    }
    Ok(clamp_unit(score.norm_score * probs.mass(&catalog.anomalous)))
}

fn clamp_unit(v: f64) -> f64 {
    if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
        log::warn!("anomalous feature {v} outside [0, 1]; clamping");
    }
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalousFeatureMap {
    pub grid: TileGrid,
    /// Row-major, one value per tile.
    pub af: Vec<f64>,
    /// Tiles classified as background; rendered black.
    pub background: Vec<bool>,
    pub display_scale: f64,
    pub source_id: String,
}

/// Assembles per-tile values (in tiling order) into a map.
pub fn build_map(grid: &TileGrid, values: &[f64], source_id: impl Into<String>) -> Result<AnomalousFeatureMap> {
    if values.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values for a {}x{} grid",
            values.len(),
            grid.rows,
            grid.cols
        )));
    }
    Ok(AnomalousFeatureMap {
        grid: *grid,
        af: values.iter().map(|&v| clamp_unit(v)).collect(),
        background: vec![false; values.len()],
        display_scale: DISPLAY_SCALE,
        source_id: source_id.into(),
    })
}

impl AnomalousFeatureMap {
    pub fn with_background(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.af.len() {
            return Err(Error::InvalidArgument(format!(
                "background mask of {} for {} tiles",
                mask.len(),
                self.af.len()
            )));
        }
        self.background = mask;
        Ok(self)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.af[row * self.grid.cols + col]
    }

    /// Value at pixel `(y, x)`, bilinear between tile centres.
    fn smooth_at(&self, y: usize, x: usize) -> f64 {
        let side = self.grid.side as f64;
        let coord = |p: usize, n: usize| {
            let f = ((p as f64 + 0.5) / side - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (f.floor() as usize).min(n.saturating_sub(2));
            (i, (f - i as f64).clamp(0.0, 1.0))
        };
        let (r0, fy) = coord(y, self.grid.rows);
        let (c0, fx) = coord(x, self.grid.cols);
        let r1 = (r0 + 1).min(self.grid.rows - 1);
        let c1 = (c0 + 1).min(self.grid.cols - 1);
        let top = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
        let bottom = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// `(t, label)` pairs for `ticks` evenly spaced legend positions.
    pub fn legend(&self, ticks: usize) -> Vec<(f64, String)> {
        legend_labels(ticks, self.display_scale)
    }
}

pub fn legend_labels(ticks: usize, display_scale: f64) -> Vec<(f64, String)> {
    let n = ticks.max(2);
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (t, format_label(t * display_scale))
        })
        .collect()
}

fn format_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Jet colour of `t` (clamped into [0, 1]).
pub fn jet(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let k = JET_ANCHORS
        .windows(2)
        .position(|w| t <= w[1].0)
        .unwrap_or(JET_ANCHORS.len() - 2);
    let (t0, c0) = JET_ANCHORS[k];
    let (t1, c1) = JET_ANCHORS[k + 1];
    let f = (t - t0) / (t1 - t0);
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let v = f64::from(c0[ch]) + f * (f64::from(c1[ch]) - f64::from(c0[ch]));
        out[ch] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Heat weight in `α·heat + (1−α)·base`; ignored without a base image.
    pub alpha: f64,
    /// Bilinear interpolation between tile centres instead of hard blocks.
    pub smooth: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            alpha: 0.5,
            smooth: false,
        }
    }
}

/// Jet heatmap of `map` covering the grid's pixel extent, optionally
/// blended over `base` (which must have exactly that extent).
pub fn render(map: &AnomalousFeatureMap, opts: &RenderOptions, base: Option<&RawImage>) -> Result<RawImage> {
    let g = &map.grid;
    let (h, w) = (g.rows * g.side, g.cols * g.side);
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", opts.alpha)));
    }
    let base = match base {
        Some(b) if b.height() != h || b.width() != w => {
            return Err(Error::InvalidArgument(format!(
                "base image is {}x{}, map covers {h}x{w}",
                b.height(),
                b.width()
            )))
        }
        Some(b) => Some(b.to_rgb()),
        None => None,
    };
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let tile = (y / g.side) * g.cols + x / g.side;
            let heat = if map.background[tile] {
                [0, 0, 0]
            } else if opts.smooth {
                jet(map.smooth_at(y, x))
            } else {
                jet(map.af[tile])
            };
            let px = &mut out[(y * w + x) * 3..(y * w + x) * 3 + 3];
            match &base {
                None => px.copy_from_slice(&heat),
                Some(b) => {
                    for c in 0..3 {
                        let v = opts.alpha * f64::from(heat[c])
                            + (1.0 - opts.alpha) * f64::from(b.get(y, x, c));
                        px[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    RawImage::new(h, w, 3, out)
}

/// Vertical jet colour bar, hot at the top.
pub fn colorbar(height: usize, width: usize) -> Result<RawImage> {
    let mut img = RawImage::filled(height, width, 3, 0)?;
    for y in 0..height {
        let t = if height > 1 {
            1.0 - y as f64 / (height - 1) as f64
        } else {
            1.0
        };
        let c = jet(t);
        for x in 0..width {
            for (ch, &v) in c.iter().enumerate() {
                img.set(y, x, ch, v);
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Anomalous,
    Normal,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Anomalous => "anomalous",
            Side::Normal => "normal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub side: Side,
}

/// Contiguous fixed-width bins `[k·w, (k+1)·w)`; a bin whose upper edge is
/// at or below zero is on the anomalous side.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<Bin>,
}

pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {bin_width} must be positive")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram value".into()));
    }
    let index = |v: f64| (v / bin_width).floor() as i64;
    let Some(lo) = values.iter().map(|&v| index(v)).min() else {
        return Ok(Histogram {
            bin_width,
            bins: Vec::new(),
        });
    };
    let hi = values.iter().map(|&v| index(v)).max().unwrap_or(lo);
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(index(v) - lo) as usize] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let k = lo + i as i64;
            let (low, high) = (k as f64 * bin_width, (k + 1) as f64 * bin_width);
            Bin {
                low,
                high,
                count,
                side: if high <= 0.0 { Side::Anomalous } else { Side::Normal },
            }
        })
        .collect();
    Ok(Histogram { bin_width, bins })
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn side_count(&self, side: Side) -> usize {
        self.bins.iter().filter(|b| b.side == side).map(|b| b.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count,side\n");
        for b in &self.bins {
            let _ = writeln!(s, "{},{},{},{}", b.low, b.high, b.count, b.side.as_str());
        }
        s
    }

    /// Bar chart, `bar_width` pixels per bin, tallest bar `height` pixels,
    /// anomalous side brown and normal side blue on white.
    pub fn render(&self, bar_width: usize, height: usize) -> Result<RawImage> {
        let w = (self.bins.len() * bar_width).max(1);
        let mut img = RawImage::filled(height.max(1), w, 3, 255)?;
        let peak = self.bins.iter().map(|b| b.count).max().unwrap_or(0);
        if peak == 0 {
            return Ok(img);
        }
        for (i, b) in self.bins.iter().enumerate() {
            let bar = (b.count * height).div_ceil(peak);
            let color = match b.side {
                Side::Anomalous => ANOMALOUS_SIDE_RGB,
                Side::Normal => NORMAL_SIDE_RGB,
            };
            for y in height - bar..height {
                for x in i * bar_width..(i + 1) * bar_width {
                    for (ch, &v) in color.iter().enumerate() {
                        img.set(y, x, ch, v);
                    }
                }
            }
        }
        Ok(img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MontageOrder {
    MostAnomalous,
    MostNormal,
}

/// Indices of the `k` extreme tiles by score (higher = more anomalous),
/// ties broken by `(source_id, row, col)`.
pub fn rank(tiles: &[UnitImage], scores: &[f64], k: usize, order: MontageOrder) -> Result<Vec<usize>> {
    if tiles.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tiles but {} scores",
            tiles.len(),
            scores.len()
        )));
    }
    if k > tiles.len() {
        return Err(Error::InvalidArgument(format!(
            "montage of {k} from only {} tiles",
            tiles.len()
        )));
    }
    let mut idx: Vec<usize> = (0..tiles.len()).collect();
    idx.sort_by(|&a, &b| {
        let by_score = match order {
            MontageOrder::MostAnomalous => scores[b].total_cmp(&scores[a]),
            MontageOrder::MostNormal => scores[a].total_cmp(&scores[b]),
        };
        by_score.then_with(|| tiles[a].key().cmp(&tiles[b].key()))
    });
    idx.truncate(k);
    Ok(idx)
}

/// `⌈√k⌉` columns and as many rows as needed.
pub fn montage_shape(k: usize) -> (usize, usize) {
    if k == 0 {
        return (0, 0);
    }
    let mut cols = (k as f64).sqrt() as usize;
    while cols * cols < k {
        cols += 1;
    }
    (k.div_ceil(cols), cols)
}

/// Row-major RGB grid of the `k` extreme tiles; `shape` overrides the
/// default `(rows, cols)`.
pub fn montage(
    tiles: &[UnitImage],
    scores: &[f64],
    k: usize,
    order: MontageOrder,
    shape: Option<(usize, usize)>,
) -> Result<RawImage> {
    let picked = rank(tiles, scores, k, order)?;
    let (rows, cols) = shape.unwrap_or_else(|| montage_shape(k));
    if rows * cols < k {
        return Err(Error::InvalidArgument(format!("{rows}x{cols} grid cannot hold {k} tiles")));
    }
    let side = tiles.first().map_or(0, |t| t.side);
    if tiles.iter().any(|t| t.side != side) {
        return Err(Error::InvalidArgument("montage tiles differ in size".into()));
    }
    let mut img = RawImage::filled((rows * side).max(1), (cols * side).max(1), 3, 0)?;
    for (slot, &i) in picked.iter().enumerate() {
        let t = tiles[i].to_raw().to_rgb();
        let (oy, ox) = ((slot / cols) * side, (slot % cols) * side);
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    img.set(oy + y, ox + x, c, t.get(y, x, c));
                }
            }
        }
    }
    Ok(img)
}
