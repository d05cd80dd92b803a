//! Seeded synthetic steel-surface corpus: brushed normal textures, four
//! injected defect families and near-black background tiles, plus the
//! on-disk corpus layout shared with real datasets.
//!
//! Layout: `<root>/<class_name>/<id>.png` and `<root>/manifest.csv` with
//! columns `path,class,seed,sha256` (path relative to the root).

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgrid::{RawImage, UnitImage};
use crate::io;
use crate::nets::ClassCatalog;
use crate::tensorcore::splitmix64;

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Class indices of [`ClassCatalog::steel_strip`].
pub const NORMAL: usize = 0;
pub const BACKGROUND: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    RolledScale,
    Scratch,
    Patch,
    Inclusion,
}

impl DefectKind {
    pub const ALL: [DefectKind; 4] = [
        DefectKind::RolledScale,
        DefectKind::Scratch,
        DefectKind::Patch,
        DefectKind::Inclusion,
    ];

    /// Index in [`ClassCatalog::steel_strip`].
    pub fn class_index(self) -> usize {
        match self {
            DefectKind::RolledScale => 1,
            DefectKind::Scratch => 2,
            DefectKind::Patch => 3,
            DefectKind::Inclusion => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::RolledScale => "rolled_in_scale",
            DefectKind::Scratch => "scratch",
            DefectKind::Patch => "patch",
            DefectKind::Inclusion => "inclusion",
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match key.as_str() {
            "rolled_in_scale" | "rolled_scale" | "rolledscale" => Ok(DefectKind::RolledScale),
            "scratch" => Ok(DefectKind::Scratch),
            "patch" => Ok(DefectKind::Patch),
            "inclusion" => Ok(DefectKind::Inclusion),
            _ => Err(Error::InvalidArgument(format!("unknown defect kind `{s}`"))),
        }
    }
}

/// Tiles per class of the six-class steel catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub normal: usize,
    pub rolled_in_scale: usize,
    pub scratch: usize,
    pub patch: usize,
    pub inclusion: usize,
    pub background: usize,
}

impl ClassCounts {
    pub fn uniform(n: usize) -> Self {
        ClassCounts {
            normal: n,
            rolled_in_scale: n,
            scratch: n,
            patch: n,
            inclusion: n,
            background: n,
        }
    }

    pub fn normal_only(n: usize) -> Self {
        ClassCounts {
            normal: n,
            ..Self::default()
        }
    }

    /// Counts in catalog order.
    pub fn as_array(&self) -> [usize; 6] {
        [
            self.normal,
            self.rolled_in_scale,
            self.scratch,
            self.patch,
            self.inclusion,
            self.background,
        ]
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureParams {
    /// Number of horizontal sinusoidal streaks, inclusive range.
    pub streaks: (usize, usize),
    /// Per-streak amplitude range in gray levels.
    pub streak_amplitude: (f64, f64),
    /// Streak frequency range in cycles per tile height.
    pub streak_frequency: (f64, f64),
    /// Half-width of the uniform white noise in gray levels.
    pub noise_amplitude: f64,
    pub base_gray: (f64, f64),
    pub background_gray: (f64, f64),
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            streaks: (3, 6),
            streak_amplitude: (2.0, 6.0),
            streak_frequency: (1.0, 10.0),
            noise_amplitude: 4.0,
            base_gray: (116.0, 140.0),
            background_gray: (4.0, 16.0),
        }
    }
}

/// Intensity ranges of the injected defects, in gray levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefectParams {
    pub scratch_contrast: (f64, f64),
    pub patch_offset: (f64, f64),
    pub inclusion_darkening: (f64, f64),
    pub scale_darkening: (f64, f64),
    /// Fraction of pixels darkened inside the rolled-scale rectangle.
    pub scale_density: f64,
}

impl Default for DefectParams {
    fn default() -> Self {
        DefectParams {
            scratch_contrast: (60.0, 100.0),
            patch_offset: (30.0, 60.0),
            inclusion_darkening: (70.0, 110.0),
            scale_darkening: (40.0, 80.0),
            scale_density: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub tile_side: usize,
    pub counts: ClassCounts,
    pub seed: u64,
    #[serde(default)]
    pub texture: TextureParams,
    #[serde(default)]
    pub defects: DefectParams,
}

impl CorpusConfig {
    pub fn new(tile_side: usize, counts: ClassCounts, seed: u64) -> Self {
        CorpusConfig {
            tile_side,
            counts,
            seed,
            texture: TextureParams::default(),
            defects: DefectParams::default(),
        }
    }

    /// Seed of tile `index` of class `class`; `salt` separates the normal
    /// base from the defect drawn on it.
    pub fn tile_seed(&self, class: usize, index: usize, salt: u64) -> u64 {
        splitmix64(splitmix64(splitmix64(self.seed) ^ class as u64) ^ index as u64) ^ salt
    }

    fn validate(&self) -> Result<()> {
        if self.tile_side < 8 {
            return Err(Error::Config(format!("tile_side {} below 8", self.tile_side)));
        }
        let t = &self.texture;
        let d = &self.defects;
        let ranges = [
            ("streak_amplitude", t.streak_amplitude),
            ("streak_frequency", t.streak_frequency),
            ("base_gray", t.base_gray),
            ("background_gray", t.background_gray),
            ("scratch_contrast", d.scratch_contrast),
            ("patch_offset", d.patch_offset),
            ("inclusion_darkening", d.inclusion_darkening),
            ("scale_darkening", d.scale_darkening),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is not ordered")));
            }
        }
        if t.streaks.0 > t.streaks.1 || t.noise_amplitude < 0.0 || !(0.0..=1.0).contains(&d.scale_density) {
            return Err(Error::Config("texture or defect parameters out of range".into()));
        }
        Ok(())
    }
}

/// A tile with its class index and, for defects, the modified pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTile {
    pub tile: UnitImage,
    pub label: usize,
    /// Row-major, one flag per pixel.
    pub mask: Option<Vec<bool>>,
}

impl LabeledTile {
    pub fn mask_fraction(&self) -> f64 {
        self.mask.as_ref().map_or(0.0, |m| {
            m.iter().filter(|&&b| b).count() as f64 / m.len().max(1) as f64
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn to_gray(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn normal_texture(cfg: &CorpusConfig, id: String, seed: u64) -> UnitImage {
    let s = cfg.tile_side;
    let t = &cfg.texture;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = uniform(&mut rng, t.base_gray);
    let n = rng.gen_range(t.streaks.0..=t.streaks.1);
    // (amplitude, cycles per height, tilt in cycles per width, phase)
    let streaks: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                uniform(&mut rng, t.streak_amplitude),
                uniform(&mut rng, t.streak_frequency),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let (fy, fx) = (y as f64 / s as f64, x as f64 / s as f64);
            let band: f64 = streaks
                .iter()
                .map(|&(a, f, tilt, ph)| a * (2.0 * PI * (f * fy + tilt * fx) + ph).sin())
                .sum();
            let noise = if t.noise_amplitude > 0.0 {
                rng.gen_range(-t.noise_amplitude..t.noise_amplitude)
            } else {
                0.0
            };
            pixels.push(to_gray(base + band + noise));
        }
    }
    UnitImage {
        side: s,
        row: 0,
        col: 0,
        channels: 1,
        pixels,
        source_id: id,
    }
}

fn tile_id(class: &str, index: usize) -> String {
    format!("{class}_{index:05}")
}

/// `n` brushed-metal normal tiles.
pub fn gen_normal(cfg: &CorpusConfig, n: usize) -> Vec<LabeledTile> {
    (0..n)
        .map(|i| LabeledTile {
            tile: normal_texture(cfg, tile_id("normal", i), cfg.tile_seed(NORMAL, i, 0)),
            label: NORMAL,
            mask: None,
        })
        .collect()
}

/// `n` near-black off-sheet tiles with faint noise.
pub fn gen_background(cfg: &CorpusConfig, n: usize) -> Vec<LabeledTile> {
    let s = cfg.tile_side;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.tile_seed(BACKGROUND, i, 0));
            let base = uniform(&mut rng, cfg.texture.background_gray);
            let pixels = (0..s * s).map(|_| to_gray(base + rng.gen_range(-2.0..2.0))).collect();
            LabeledTile {
                tile: UnitImage {
                    side: s,
                    row: 0,
                    col: 0,
                    channels: 1,
                    pixels,
                    source_id: tile_id("background", i),
                },
                label: BACKGROUND,
                mask: None,
            }
        })
        .collect()
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Per-pixel intensity change of one defect on an `s`-pixel tile.
fn defect_delta(kind: DefectKind, s: usize, p: &DefectParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sf = s as f64;
    let mut delta = vec![0.0f64; s * s];
    let centre = |y: usize, x: usize| (x as f64 + 0.5, y as f64 + 0.5);
    match kind {
        DefectKind::Scratch => {
            let theta = rng.gen_range(0.0..PI);
            let len = rng.gen_range(0.4..0.9) * sf;
            let (hx, hy) = (theta.cos().abs() * len / 2.0, theta.sin().abs() * len / 2.0);
            let place = |rng: &mut ChaCha8Rng, h: f64| {
                let (lo, hi) = (h + 1.0, sf - h - 1.0);
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    sf / 2.0
                }
            };
            let (cx, cy) = (place(rng, hx), place(rng, hy));
            let (ux, uy) = (theta.cos() * len / 2.0, theta.sin() * len / 2.0);
            let (a, b) = ((cx - ux, cy - uy), (cx + ux, cy + uy));
            let width = rng.gen_range(1.0..2.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let contrast = sign * uniform(rng, p.scratch_contrast);
            for y in 0..s {
                for x in 0..s {
                    let cover = (width / 2.0 + 0.5 - segment_distance(centre(y, x), a, b)).clamp(0.0, 1.0);
                    delta[y * s + x] = contrast * cover;
                }
            }
        }
        DefectKind::Patch => {
            let (ra, rb) = (rng.gen_range(0.15..0.3) * sf, rng.gen_range(0.15..0.3) * sf);
            let (cx, cy) = (rng.gen_range(0.3..0.7) * sf, rng.gen_range(0.3..0.7) * sf);
            let phi = rng.gen_range(0.0..PI);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let offset = sign * uniform(rng, p.patch_offset);
            for y in 0..s {
                for x in 0..s {
                    let (px, py) = centre(y, x);
                    let (dx, dy) = (px - cx, py - cy);
                    let u = dx * phi.cos() + dy * phi.sin();
                    let v = -dx * phi.sin() + dy * phi.cos();
                    if (u / ra).powi(2) + (v / rb).powi(2) <= 1.0 {
                        delta[y * s + x] = offset;
                    }
                }
            }
        }
        DefectKind::Inclusion => {
            for _ in 0..rng.gen_range(1..=3) {
                let r = rng.gen_range(0.05..0.15) * sf / 2.0;
                let (cx, cy) = (rng.gen_range(0.15..0.85) * sf, rng.gen_range(0.15..0.85) * sf);
                let dark = uniform(rng, p.inclusion_darkening);
                for y in 0..s {
                    for x in 0..s {
                        let (px, py) = centre(y, x);
                        let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                        let cover = (r + 1.0 - d).clamp(0.0, 1.0);
                        let i = y * s + x;
                        delta[i] = delta[i].min(-dark * cover);
                    }
                }
            }
        }
        DefectKind::RolledScale => {
            let (h, w) = (
                ((rng.gen_range(0.3..0.6) * sf) as usize).max(2),
                ((rng.gen_range(0.3..0.6) * sf) as usize).max(2),
            );
            let (y0, x0) = (rng.gen_range(0..=s - h), rng.gen_range(0..=s - w));
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    if rng.gen_bool(p.scale_density) {
                        delta[y * s + x] = -uniform(rng, p.scale_darkening);
                    }
                }
            }
        }
    }
    delta
}

/// Draws a `kind` defect onto a normal tile. Pixels outside the returned
/// mask are bit-identical to the input.
pub fn inject_defect(
    tile: &LabeledTile,
    kind: DefectKind,
    params: &DefectParams,
    seed: u64,
) -> Result<LabeledTile> {
    if tile.label != NORMAL {
        return Err(Error::InvalidArgument(format!(
            "defects are injected into normal tiles, got class {}",
            tile.label
        )));
    }
    let t = &tile.tile;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = defect_delta(kind, t.side, params, &mut rng);
    let mut pixels = t.pixels.clone();
    let mut mask = vec![false; t.side * t.side];
    for (i, d) in delta.iter().enumerate() {
        for c in 0..t.channels {
            let j = i * t.channels + c;
            let v = to_gray(f64::from(t.pixels[j]) + d);
            if v != t.pixels[j] {
                pixels[j] = v;
                mask[i] = true;
            }
        }
    }
    Ok(LabeledTile {
        tile: UnitImage {
            pixels,
            source_id: t.source_id.replacen("normal", kind.name(), 1),
            ..t.clone()
        },
        label: kind.class_index(),
        mask: Some(mask),
    })
}

/// `n` tiles of defect `kind`, each on its own normal base.
pub fn gen_defects(cfg: &CorpusConfig, kind: DefectKind, n: usize) -> Result<Vec<LabeledTile>> {
    let class = kind.class_index();
    (0..n)
        .map(|i| {
            let base = LabeledTile {
                tile: normal_texture(cfg, tile_id(kind.name(), i), cfg.tile_seed(class, i, 0)),
                label: NORMAL,
                mask: None,
            };
            let mut out = inject_defect(&base, kind, &cfg.defects, cfg.tile_seed(class, i, 1))?;
            out.tile.source_id = tile_id(kind.name(), i);
            Ok(out)
        })
        .collect()
}

/// Every tile requested by `cfg`, in catalog class order.
pub fn generate(cfg: &CorpusConfig) -> Result<Vec<LabeledTile>> {
    cfg.validate()?;
    let c = &cfg.counts;
    let mut out = gen_normal(cfg, c.normal);
    for kind in DefectKind::ALL {
        let n = c.as_array()[kind.class_index()];
        out.extend(gen_defects(cfg, kind, n)?);
    }
    out.extend(gen_background(cfg, c.background));
    Ok(out)
}

/// A `1 × cols` strip of tiles; `defects` places a defect at a column.
/// Returns the image and the class of every column.
pub fn gen_strip(
    cfg: &CorpusConfig,
    cols: usize,
    defects: &[(usize, DefectKind)],
    strip_index: usize,
) -> Result<(RawImage, Vec<usize>)> {
    let s = cfg.tile_side;
    let mut img = RawImage::filled(s, s * cols, 1, 0)?;
    let mut labels = vec![NORMAL; cols];
    for (col, label) in labels.iter_mut().enumerate() {
        let salt = (strip_index * cols + col) as u64;
        let seed = splitmix64(cfg.tile_seed(usize::MAX, strip_index, 0) ^ salt);
        let mut tile = LabeledTile {
            tile: normal_texture(cfg, format!("strip_{strip_index:05}"), seed),
            label: NORMAL,
            mask: None,
        };
        if let Some(&(_, kind)) = defects.iter().find(|(c, _)| *c == col) {
            tile = inject_defect(&tile, kind, &cfg.defects, splitmix64(seed))?;
        }
        *label = tile.label;
        for y in 0..s {
            for x in 0..s {
                img.set(y, col * s + x, 0, tile.tile.pixels[y * s + x]);
            }
        }
    }
    Ok((img, labels))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub class: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sha256: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `cfg`'s corpus under `root`, one subdirectory per catalog class.
pub fn make_corpus(cfg: &CorpusConfig, root: &Path) -> Result<Vec<ManifestRow>> {
    let tiles = generate(cfg)?;
    let catalog = ClassCatalog::steel_strip();
    for name in &catalog.names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut index_in_class = [0usize; 6];
    let mut rows = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let class = &catalog.names[t.label];
        let i = index_in_class[t.label];
        index_in_class[t.label] += 1;
        let rel = format!("{class}/{}.png", t.tile.source_id);
        let bytes = t.tile.to_raw().encode_png()?;
        io::write_atomic(&root.join(&rel), &bytes)?;
        rows.push(ManifestRow {
            path: rel,
            class: class.clone(),
            seed: Some(cfg.tile_seed(t.label, i, 0)),
            sha256: Some(sha256_hex(&bytes)),
        });
    }
    write_manifest(&root.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    io::write_atomic(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let bytes = io::read(path)?;
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice())
        .deserialize()
        .map(|r| r.map_err(|e| Error::CorruptCorpus(format!("{}: {e}", path.display()))))
        .collect()
}

/// Loads a corpus laid out as by [`make_corpus`]. With a manifest every
/// listed file must exist and match its checksum (when given); without one
/// the class directories of `catalog` are scanned in name order.
pub fn load_corpus(root: &Path, catalog: &ClassCatalog) -> Result<Vec<LabeledTile>> {
    let manifest = root.join(MANIFEST_FILE);
    let rows = if manifest.exists() {
        read_manifest(&manifest)?
    } else {
        scan_layout(root, catalog)?
    };
    rows.iter().map(|row| load_row(root, catalog, row)).collect()
}

fn scan_layout(root: &Path, catalog: &ClassCatalog) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for name in &catalog.names {
        let dir = root.join(name);
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|f| f.to_ascii_lowercase().ends_with(".png"))
            .collect();
        files.sort();
        rows.extend(files.into_iter().map(|f| ManifestRow {
            path: format!("{name}/{f}"),
            class: name.clone(),
            seed: None,
            sha256: None,
        }));
    }
    Ok(rows)
}

fn load_row(root: &Path, catalog: &ClassCatalog, row: &ManifestRow) -> Result<LabeledTile> {
    let label = catalog
        .index_of(&row.class)
        .ok_or_else(|| Error::CorruptCorpus(format!("unknown class `{}`", row.class)))?;
    let class_dir = root.join(&row.class);
    if !class_dir.is_dir() {
        return Err(Error::CorruptCorpus(format!(
            "class directory {} is missing",
            class_dir.display()
        )));
    }
    let path = root.join(&row.path);
    if !path.is_file() {
        return Err(Error::CorruptCorpus(format!("{} is missing", path.display())));
    }
    let bytes = io::read(&path)?;
    if let Some(expected) = row.sha256.as_deref().filter(|s| !s.is_empty()) {
        let actual = sha256_hex(&bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::CorruptCorpus(format!(
                "{} checksum {actual} does not match manifest {expected}",
                path.display()
            )));
        }
    }
    let img = RawImage::decode_png(&bytes).map_err(|e| Error::CorruptCorpus(format!("{}: {e}", path.display())))?;
    let id = Path::new(&row.path)
        .file_stem()
        .map_or_else(|| row.path.clone(), |s| s.to_string_lossy().into_owned());
    let tile = UnitImage::from_raw(id, &img).map_err(|e| Error::CorruptCorpus(format!("{}: {e}", path.display())))?;
    Ok(LabeledTile { tile, label, mask: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(counts: ClassCounts, seed: u64) -> CorpusConfig {
        CorpusConfig::new(32, counts, seed)
    }

    fn mean(t: &UnitImage) -> f64 {
        t.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / t.pixels.len() as f64
    }

    #[test]
    fn empty_and_deterministic() {
        let c = cfg(ClassCounts::uniform(3), 9);
        assert!(gen_normal(&c, 0).is_empty());
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = cfg(ClassCounts::uniform(3), 10);
        assert_ne!(generate(&c).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn normal_means_stay_mid_gray() {
        let c = cfg(ClassCounts::default(), 1);
        for t in gen_normal(&c, 1000) {
            let m = mean(&t.tile);
            assert!((96.0..=160.0).contains(&m), "mean {m}");
        }
    }

    #[test]
    fn background_is_dark() {
        let c = cfg(ClassCounts::default(), 1);
        for t in gen_background(&c, 50) {
            assert!(mean(&t.tile) < 24.0);
            assert!(t.mask.is_none());
        }
    }

    #[test]
    fn defect_masks_within_bounds_and_learnable() {
        let c = cfg(ClassCounts::default(), 4);
        for kind in DefectKind::ALL {
            for t in gen_defects(&c, kind, 200).unwrap() {
                let f = t.mask_fraction();
                assert!((0.005..=0.40).contains(&f), "{kind} mask fraction {f}");
                assert_eq!(t.label, kind.class_index());
            }
        }
    }

    #[test]
    fn defect_change_exceeds_noise() {
        let c = cfg(ClassCounts::default(), 8);
        let noise = c.texture.noise_amplitude / 2.0;
        for (i, base) in gen_normal(&c, 100).into_iter().enumerate() {
            for kind in DefectKind::ALL {
                let d = inject_defect(&base, kind, &c.defects, i as u64).unwrap();
                let mask = d.mask.as_ref().unwrap();
                let (sum, n) = mask.iter().enumerate().filter(|(_, &m)| m).fold((0.0, 0), |(s, n), (j, _)| {
                    (s + (f64::from(d.tile.pixels[j]) - f64::from(base.tile.pixels[j])).abs(), n + 1)
                });
                assert!(sum / n as f64 > noise, "{kind}: {} vs {noise}", sum / n as f64);
            }
        }
    }

    #[test]
    fn inject_requires_normal_tile_and_parses_kinds() {
        let c = cfg(ClassCounts::default(), 4);
        let d = gen_defects(&c, DefectKind::Patch, 1).unwrap().remove(0);
        assert!(matches!(
            inject_defect(&d, DefectKind::Scratch, &c.defects, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert_eq!("rolled-in scale".parse::<DefectKind>().unwrap(), DefectKind::RolledScale);
        assert!(matches!("crack".parse::<DefectKind>(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn counts_are_exact() {
        let counts = ClassCounts {
            normal: 5,
            rolled_in_scale: 1,
            scratch: 0,
            patch: 2,
            inclusion: 3,
            background: 4,
        };
        let tiles = generate(&cfg(counts, 2)).unwrap();
        let mut got = [0usize; 6];
        for t in &tiles {
            got[t.label] += 1;
        }
        assert_eq!(got, counts.as_array());
    }

    #[test]
    fn strip_has_requested_defects() {
        let c = cfg(ClassCounts::default(), 3);
        let (img, labels) = gen_strip(&c, 7, &[(2, DefectKind::Scratch), (5, DefectKind::Patch)], 0).unwrap();
        assert_eq!((img.height(), img.width()), (32, 224));
        assert_eq!(labels, [0, 0, 2, 0, 0, 3, 0]);
    }

    #[test]
    fn corpus_round_trip_and_six_directories() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(ClassCounts::uniform(2), 5);
        let rows = make_corpus(&c, dir.path()).unwrap();
        assert_eq!(rows.len(), 12);
        let subdirs = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
        assert_eq!(subdirs, 6);
        let loaded = load_corpus(dir.path(), &ClassCatalog::steel_strip()).unwrap();
        let made = generate(&c).unwrap();
        assert_eq!(loaded.len(), made.len());
        for (a, b) in loaded.iter().zip(&made) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.tile.pixels, b.tile.pixels);
        }
    }

    #[test]
    fn corpus_layout_loads_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        make_corpus(&cfg(ClassCounts::uniform(1), 5), dir.path()).unwrap();
        fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        let loaded = load_corpus(dir.path(), &ClassCatalog::steel_strip()).unwrap();
        assert_eq!(loaded.iter().map(|t| t.label).collect::<Vec<_>>(), [0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn corrupt_corpora_are_rejected() {
        let cat = ClassCatalog::steel_strip();
        let dir = tempfile::tempdir().unwrap();
        let rows = make_corpus(&cfg(ClassCounts::uniform(1), 5), dir.path()).unwrap();
        fs::remove_file(dir.path().join(&rows[2].path)).unwrap();
        assert!(matches!(load_corpus(dir.path(), &cat), Err(Error::CorruptCorpus(_))));

        let dir = tempfile::tempdir().unwrap();
        let rows = make_corpus(&cfg(ClassCounts::uniform(1), 5), dir.path()).unwrap();
        fs::remove_dir_all(dir.path().join(&rows[3].class)).unwrap();
        assert!(matches!(load_corpus(dir.path(), &cat), Err(Error::CorruptCorpus(_))));

        let dir = tempfile::tempdir().unwrap();
        let rows = make_corpus(&cfg(ClassCounts::uniform(1), 5), dir.path()).unwrap();
        let other = cfg(ClassCounts::uniform(1), 6);
        let png = generate(&other).unwrap()[0].tile.to_raw().encode_png().unwrap();
        fs::write(dir.path().join(&rows[0].path), png).unwrap();
        assert!(matches!(load_corpus(dir.path(), &cat), Err(Error::CorruptCorpus(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pixels_outside_mask_are_untouched(seed in any::<u64>(), k in 0usize..4) {
            let c = cfg(ClassCounts::default(), seed);
            let base = gen_normal(&c, 1).remove(0);
            let d = inject_defect(&base, DefectKind::ALL[k], &c.defects, seed).unwrap();
            let mask = d.mask.unwrap();
            prop_assert_eq!(mask.len(), 32 * 32);
            for (i, &m) in mask.iter().enumerate() {
                prop_assert_eq!(!m, d.tile.pixels[i] == base.tile.pixels[i]);
            }
        }
    }
}
