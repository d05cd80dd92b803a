//! The three pipeline networks: tile classifier, U-Net style generator and
//! patch discriminator, plus tile-level inference helpers.
//!
//! Node names are prefixed per network (`cls.`, `gen.`, `disc.`), so
//! parameter names never collide between the generator and discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgrid::UnitImage;
use crate::tensorcore::{loss, LayerSpec, Network, NetworkBuilder, NodeId, Tensor};

/// Name of the discriminator node whose activation is the feature vector.
pub const FEATURE_NODE: &str = "disc.feature";
/// Name of the discriminator's pre-sigmoid real/fake logit.
pub const LOGIT_NODE: &str = "disc.logit";

const INFER_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    PaperScale,
}

/// Architecture hyper-parameters shared by the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub preset: Preset,
    pub input_side: usize,
    pub input_channels: usize,
    /// Generator encoder stages (each ends in a 2x max-pool).
    pub encoder_depth: usize,
    pub base_channels: usize,
    /// Decoder stage width relative to the mirrored encoder stage.
    pub decoder_multiplier: usize,
    /// Conv + PReLU blocks between encoder and decoder.
    pub bridge_blocks: usize,
    pub dropout_rate: f32,
    pub classifier_depth: usize,
    pub classifier_base_channels: usize,
    pub disc_downsamplings: usize,
    pub disc_base_channels: usize,
    pub feature_channels: usize,
    pub feature_kernel: usize,
    pub feature_padding: usize,
}

impl NetConfig {
    /// 32px single-channel tiles, trainable on a laptop in minutes.
    pub fn desk() -> Self {
        NetConfig {
            preset: Preset::Desk,
            input_side: 32,
            input_channels: 1,
            encoder_depth: 2,
            base_channels: 8,
            decoder_multiplier: 4,
            bridge_blocks: 3,
            dropout_rate: 0.1,
            classifier_depth: 3,
            classifier_base_channels: 8,
            disc_downsamplings: 4,
            disc_base_channels: 8,
            feature_channels: 16,
            feature_kernel: 3,
            feature_padding: 1,
        }
    }

    /// 100px RGB input, four stride-2 discriminator stages ending in a
    /// 256-channel 4x4 feature map (4096 values).
    pub fn paper_scale() -> Self {
        NetConfig {
            preset: Preset::PaperScale,
            input_side: 100,
            input_channels: 3,
            encoder_depth: 2,
            base_channels: 64,
            decoder_multiplier: 4,
            bridge_blocks: 3,
            dropout_rate: 0.5,
            classifier_depth: 2,
            classifier_base_channels: 32,
            disc_downsamplings: 4,
            disc_base_channels: 32,
            feature_channels: 256,
            feature_kernel: 3,
            feature_padding: 0,
        }
    }

    pub fn encoder_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn decoder_channels(&self, stage: usize) -> usize {
        self.decoder_multiplier * self.encoder_channels(stage)
    }

    /// Side of the discriminator's final feature map, if the geometry fits.
    pub fn feature_side(&self) -> Option<usize> {
        let mut s = self.input_side;
        for _ in 0..self.disc_downsamplings {
            // kernel 4, stride 2, padding 1 halves (floor) the side
            if s < 2 {
                return None;
            }
            s /= 2;
        }
        let padded = s + 2 * self.feature_padding;
        if padded < self.feature_kernel {
            return None;
        }
        Some(padded - self.feature_kernel + 1)
    }

    /// Length D of the feature vector.
    pub fn feature_dim(&self) -> usize {
        self.feature_side()
            .map_or(0, |s| s * s * self.feature_channels)
    }

    fn check_common(&self) -> Result<()> {
        if self.input_side == 0 || !(self.input_channels == 1 || self.input_channels == 3) {
            return Err(Error::Config(format!(
                "input must be non-empty with 1 or 3 channels, got side {} x {} channels",
                self.input_side, self.input_channels
            )));
        }
        Ok(())
    }

    fn check_generator(&self) -> Result<()> {
        self.check_common()?;
        if self.encoder_depth < 1 {
            return Err(Error::Config("encoder_depth must be >= 1".into()));
        }
        if self.decoder_multiplier < 1 {
            return Err(Error::Config("decoder_multiplier must be >= 1".into()));
        }
        if self.base_channels < 1 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if !self.input_side.is_multiple_of(1 << self.encoder_depth) {
            return Err(Error::Config(format!(
                "input side {} is not divisible by 2^{}",
                self.input_side, self.encoder_depth
            )));
        }
        Ok(())
    }
}

/// Ordered class labels with the anomalous and region-of-interest subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub names: Vec<String>,
    pub anomalous: Vec<usize>,
    pub roi: Vec<usize>,
    pub background: Vec<usize>,
}

impl ClassCatalog {
    pub fn new(
        names: Vec<String>,
        anomalous: Vec<usize>,
        roi: Vec<usize>,
        background: Vec<usize>,
    ) -> Result<Self> {
        let k = names.len();
        if let Some(&i) = anomalous.iter().chain(&roi).chain(&background).find(|&&i| i >= k) {
            return Err(Error::Config(format!("class index {i} outside catalog of {k}")));
        }
        if anomalous.iter().any(|a| background.contains(a)) {
            return Err(Error::Config(
                "a class cannot be both anomalous and background".into(),
            ));
        }
        Ok(ClassCatalog {
            names,
            anomalous,
            roi,
            background,
        })
    }

    /// Six strip-steel classes: normal, four defect families, background.
    pub fn steel_strip() -> Self {
        let names = [
            "normal",
            "rolled_in_scale",
            "scratch",
            "patch",
            "inclusion",
            "background",
        ];
        ClassCatalog {
            names: names.iter().map(|s| s.to_string()).collect(),
            anomalous: vec![1, 2, 3, 4],
            roi: vec![0, 1, 2, 3, 4],
            background: vec![5],
        }
    }

    /// Seven painted-steel bridge inspection classes; corrosion is anomalous.
    pub fn painted_steel() -> Self {
        let names = [
            "normal_painted_steel",
            "corrosion",
            "concrete",
            "mixed_concrete_background",
            "mixed_concrete_painted_steel",
            "dark",
            "background",
        ];
        ClassCatalog {
            names: names.iter().map(|s| s.to_string()).collect(),
            anomalous: vec![1],
            roi: vec![0, 1, 2, 4],
            background: vec![3, 5, 6],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Resolves a comma separated list of class names or indices.
    pub fn parse_subset(&self, spec: &str) -> Result<Vec<usize>> {
        spec.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                self.index_of(s)
                    .or_else(|| s.parse::<usize>().ok().filter(|&i| i < self.len()))
                    .ok_or_else(|| Error::Config(format!("unknown class `{s}`")))
            })
            .collect()
    }
}

/// Softmax distribution over the catalog for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    pub probs: Vec<f64>,
}

impl ClassProbs {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Total probability mass on `subset`.
    pub fn mass(&self, subset: &[usize]) -> f64 {
        subset.iter().map(|&i| self.probs[i]).sum()
    }
}

/// Flattened final-convolution activation of the discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `classifier_depth` blocks of conv3x3 -> ReLU -> max-pool, then one dense
/// logit per class. Softmax is applied by [`classify`].
pub fn build_classifier(cfg: &NetConfig, catalog: &ClassCatalog, seed: u64) -> Result<Network> {
    cfg.check_common()?;
    if catalog.len() < 2 {
        return Err(Error::Config("classifier needs at least 2 classes".into()));
    }
    if cfg.classifier_depth < 1 || !cfg.input_side.is_multiple_of(1 << cfg.classifier_depth) {
        return Err(Error::Config(format!(
            "input side {} is not divisible by 2^{}",
            cfg.input_side, cfg.classifier_depth
        )));
    }
    let mut b = NetworkBuilder::new(cfg.input_channels, cfg.input_side, cfg.input_side);
    let mut x = b.input();
    for i in 0..cfg.classifier_depth {
        x = b.conv(&format!("cls.b{i}.conv"), x, cfg.classifier_base_channels << i, 3, 1, 1)?;
        x = b.unary(&format!("cls.b{i}.relu"), x, LayerSpec::Relu)?;
        x = b.unary(&format!("cls.b{i}.pool"), x, LayerSpec::MaxPool2)?;
    }
    b.dense("cls.logits", x, catalog.len())?;
    Ok(b.build(seed))
}

/// U-Net style generator: VGG-like encoder stages, a conv+PReLU bridge and
/// an over-complete decoder with skip concatenation and dropout.
pub fn build_generator(cfg: &NetConfig, seed: u64) -> Result<Network> {
    cfg.check_generator()?;
    let mut b = NetworkBuilder::new(cfg.input_channels, cfg.input_side, cfg.input_side);
    let mut x = b.input();
    let mut skips: Vec<NodeId> = Vec::new();
    for i in 0..cfg.encoder_depth {
        let c = cfg.encoder_channels(i);
        for j in 0..2 {
            x = b.conv(&format!("gen.enc{i}.conv{j}"), x, c, 3, 1, 1)?;
            x = b.unary(&format!("gen.enc{i}.relu{j}"), x, LayerSpec::Relu)?;
        }
        skips.push(x);
        x = b.unary(&format!("gen.enc{i}.pool"), x, LayerSpec::MaxPool2)?;
    }
    let bridge = cfg.encoder_channels(cfg.encoder_depth);
    for j in 0..cfg.bridge_blocks {
        x = b.conv(&format!("gen.bridge{j}.conv"), x, bridge, 3, 1, 1)?;
        x = b.unary(
            &format!("gen.bridge{j}.prelu"),
            x,
            LayerSpec::Prelu { init_slope: 0.25 },
        )?;
    }
    for i in (0..cfg.encoder_depth).rev() {
        let d = cfg.decoder_channels(i);
        x = b.unary(&format!("gen.dec{i}.up"), x, LayerSpec::Upsample2x)?;
        x = b.conv(&format!("gen.dec{i}.upconv"), x, d, 3, 1, 1)?;
        x = b.unary(&format!("gen.dec{i}.uprelu"), x, LayerSpec::Relu)?;
        x = b.concat(&format!("gen.dec{i}.cat"), &[x, skips[i]])?;
        x = b.unary(
            &format!("gen.dec{i}.drop"),
            x,
            LayerSpec::Dropout {
                rate: cfg.dropout_rate,
            },
        )?;
        x = b.conv(&format!("gen.dec{i}.conv"), x, d, 3, 1, 1)?;
        x = b.unary(&format!("gen.dec{i}.relu"), x, LayerSpec::Relu)?;
    }
    x = b.conv("gen.out.conv", x, cfg.input_channels, 3, 1, 1)?;
    b.unary("gen.out.sigmoid", x, LayerSpec::Sigmoid)?;
    Ok(b.build(seed))
}

/// Patch discriminator: `disc_downsamplings` stride-2 conv + ELU stages, a
/// final conv + ELU (the feature map), a dense logit and a sigmoid.
pub fn build_discriminator(cfg: &NetConfig, seed: u64) -> Result<Network> {
    cfg.check_common()?;
    if cfg.input_side < (1 << cfg.disc_downsamplings) {
        return Err(Error::Config(format!(
            "input side {} is smaller than 2^{}",
            cfg.input_side, cfg.disc_downsamplings
        )));
    }
    if cfg.feature_dim() == 0 {
        return Err(Error::Config(
            "discriminator geometry leaves no feature values".into(),
        ));
    }
    let elu = LayerSpec::Elu { alpha: 1.0 };
    let mut b = NetworkBuilder::new(cfg.input_channels, cfg.input_side, cfg.input_side);
    let mut x = b.input();
    for i in 0..cfg.disc_downsamplings {
        x = b.conv(&format!("disc.down{i}.conv"), x, cfg.disc_base_channels << i, 4, 2, 1)?;
        x = b.unary(&format!("disc.down{i}.elu"), x, elu.clone())?;
    }
    x = b.conv(
        "disc.feature.conv",
        x,
        cfg.feature_channels,
        cfg.feature_kernel,
        1,
        cfg.feature_padding,
    )?;
    x = b.unary(FEATURE_NODE, x, elu)?;
    x = b.dense(LOGIT_NODE, x, 1)?;
    b.unary("disc.prob", x, LayerSpec::Sigmoid)?;
    Ok(b.build(seed))
}

/// Stacks tiles into a `[n, c, side, side]` batch scaled to [0, 1].
pub fn tiles_to_tensor<'a>(
    net: &Network,
    tiles: impl IntoIterator<Item = &'a UnitImage>,
) -> Result<Tensor> {
    let [c, h, w] = net.input_shape();
    let mut items = Vec::new();
    for t in tiles {
        if t.side != h || t.side != w || t.channels != c {
            return Err(Error::shape(
                "input",
                format!(
                    "tile {}px x {} channels, network expects {h}px x {c}",
                    t.side, t.channels
                ),
            ));
        }
        items.push(t.planar_f32());
    }
    Tensor::stack(&items, [c, h, w])
}

pub fn classify(classifier: &Network, tile: &UnitImage) -> Result<ClassProbs> {
    Ok(classify_batch(classifier, std::slice::from_ref(tile))?.remove(0))
}

pub fn classify_batch(classifier: &Network, tiles: &[UnitImage]) -> Result<Vec<ClassProbs>> {
    let mut out = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(INFER_CHUNK) {
        let x = tiles_to_tensor(classifier, chunk)?;
        let acts = classifier.infer(&x)?;
        let logits = acts.output();
        for b in 0..chunk.len() {
            out.push(ClassProbs {
                probs: loss::softmax(logits.item(b)),
            });
        }
    }
    Ok(out)
}

/// Reconstruction of one tile, `[c, side, side]` planar values in [0, 1].
pub fn generate(generator: &Network, tile: &UnitImage) -> Result<Tensor> {
    let x = tiles_to_tensor(generator, std::iter::once(tile))?;
    let acts = generator.infer(&x)?;
    let out = acts.output();
    Tensor::new(out.shape()[1..].to_vec(), out.data().to_vec())
}

/// Mean absolute reconstruction error per tile.
pub fn reconstruction_errors(generator: &Network, tiles: &[UnitImage]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(INFER_CHUNK) {
        let x = tiles_to_tensor(generator, chunk)?;
        let acts = generator.infer(&x)?;
        for b in 0..chunk.len() {
            let (xi, yi) = (x.item(b), acts.output().item(b));
            let e: f64 = xi
                .iter()
                .zip(yi)
                .map(|(a, b)| f64::from((a - b).abs()))
                .sum();
            out.push(e / xi.len() as f64);
        }
    }
    Ok(out)
}

fn feature_node(disc: &Network) -> Result<NodeId> {
    disc.node_id(FEATURE_NODE)
        .ok_or_else(|| Error::Config(format!("network has no `{FEATURE_NODE}` node")))
}

pub fn extract_feature(discriminator: &Network, tile: &UnitImage) -> Result<FeatureVector> {
    Ok(extract_features(discriminator, std::slice::from_ref(tile))?.remove(0))
}

pub fn extract_features(discriminator: &Network, tiles: &[UnitImage]) -> Result<Vec<FeatureVector>> {
    let node = feature_node(discriminator)?;
    let mut out = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(INFER_CHUNK) {
        let x = tiles_to_tensor(discriminator, chunk)?;
        let acts = discriminator.infer(&x)?;
        let f = acts.value(node);
        for b in 0..chunk.len() {
            out.push(FeatureVector {
                values: f.item(b).to_vec(),
            });
        }
    }
    Ok(out)
}

/// Feature dimension actually produced by a built discriminator.
pub fn discriminator_feature_dim(discriminator: &Network) -> Result<usize> {
    let [c, h, w] = discriminator.node_shape(feature_node(discriminator)?);
    Ok(c * h * w)
}

/// Number of stride-2 convolutions in a discriminator.
pub fn discriminator_downsamplings(discriminator: &Network) -> usize {
    (0..discriminator.len())
        .filter(|&i| matches!(discriminator.node_layer(i), LayerSpec::Conv { stride: 2, .. }))
        .count()
}
