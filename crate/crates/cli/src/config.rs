//! Pipeline configuration: a TOML file whose every field a flag can
//! override. Precedence for the seed is flag, file, `FERROSCOPE_SEED`, 0.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ferroscope::ocsvm::FitParams;
use ferroscope::synthdata::{ClassCounts, DefectParams, TextureParams};
use ferroscope::trainer::TrainConfig;
use ferroscope::{ClassCatalog, NetConfig, Preset, TilePolicy};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "FERROSCOPE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CatalogName {
    /// normal, rolled_in_scale, scratch, patch, inclusion, background
    Steel,
    /// seven-class painted steel catalog
    Painted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingSection {
    pub side: usize,
    pub policy: TilePolicy,
}

impl Default for TilingSection {
    fn default() -> Self {
        TilingSection {
            side: 32,
            policy: TilePolicy::ScaleUp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassesSection {
    pub catalog: CatalogName,
    /// Comma-separated names or indices replacing the catalog's anomalous set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anomalous: Option<String>,
}

impl Default for ClassesSection {
    fn default() -> Self {
        ClassesSection {
            catalog: CatalogName::Steel,
            anomalous: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub preset: Preset,
    /// Full architecture; replaces the preset when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<NetConfig>,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            preset: Preset::Desk,
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub counts: ClassCounts,
    pub texture: TextureParams,
    pub defects: DefectParams,
    /// Raw strip images written next to the corpus.
    pub strips: usize,
    pub strip_cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    /// Heat weight of the overlay.
    pub alpha: f64,
    pub smooth: bool,
    pub bin_width: f64,
    pub montage_k: usize,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            alpha: 0.5,
            smooth: false,
            bin_width: 0.05,
            montage_k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tiling: TilingSection,
    pub classes: ClassesSection,
    pub net: NetSection,
    pub corpus: CorpusSection,
    pub train_cls: TrainConfig,
    pub train_gan: TrainConfig,
    pub svm: FitParams,
    pub map: MapSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            tiling: TilingSection::default(),
            classes: ClassesSection::default(),
            net: NetSection::default(),
            corpus: CorpusSection {
                counts: ClassCounts::uniform(300),
                strip_cols: 7,
                ..CorpusSection::default()
            },
            train_cls: TrainConfig::classifier(),
            train_gan: TrainConfig::gan(),
            svm: FitParams::default(),
            map: MapSection::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit without touching disk.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tile_side: Option<usize>,
    #[arg(long, global = true, value_parser = parse_policy)]
    pub policy: Option<TilePolicy>,
    #[arg(long, global = true)]
    pub catalog: Option<CatalogName>,
    /// Comma-separated class names or indices.
    #[arg(long, global = true)]
    pub anomalous_classes: Option<String>,
    #[arg(long, global = true)]
    pub preset: Option<PresetArg>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f32>,
    #[arg(long, global = true)]
    pub split_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_rec: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_adv: Option<f64>,
    #[arg(long, global = true)]
    pub nu: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub smooth: bool,
    #[arg(long, global = true)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    PaperScale,
}

fn parse_policy(s: &str) -> Result<TilePolicy, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "scaleup" => Ok(TilePolicy::ScaleUp),
        "droppartial" => Ok(TilePolicy::DropPartial),
        _ => Err(format!("unknown policy `{s}` (scaleup|droppartial)")),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// File (if any) plus flags plus the seed fallback chain.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = o.seed {
            c.seed = Some(s);
        }
        if c.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                let s = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
                c.seed = Some(s);
            }
        }
        let seed = c.seed.unwrap_or(0);
        c.seed = Some(seed);
        c.train_cls.seed = seed;
        c.train_gan.seed = seed;
        if let Some(v) = o.tile_side {
            c.tiling.side = v;
        }
        if let Some(v) = o.policy {
            c.tiling.policy = v;
        }
        if let Some(v) = o.catalog {
            c.classes.catalog = v;
        }
        if let Some(v) = &o.anomalous_classes {
            c.classes.anomalous = Some(v.clone());
        }
        if let Some(p) = o.preset {
            c.net.preset = match p {
                PresetArg::Desk => Preset::Desk,
                PresetArg::PaperScale => Preset::PaperScale,
            };
            c.net.custom = None;
        }
        for t in [&mut c.train_cls, &mut c.train_gan] {
            if let Some(v) = o.epochs {
                t.epochs = v;
            }
            if let Some(v) = o.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = o.learning_rate {
                t.learning_rate = v;
            }
            if let Some(v) = o.split_ratio {
                t.split_ratio = v;
            }
        }
        if let Some(v) = o.lambda_rec {
            c.train_gan.loss_weights.reconstruction = v;
        }
        if let Some(v) = o.lambda_adv {
            c.train_gan.loss_weights.adversarial = v;
        }
        if let Some(v) = o.nu {
            c.svm.nu = v;
        }
        if o.gamma.is_some() {
            c.svm.gamma = o.gamma;
        }
        if let Some(v) = o.alpha {
            c.map.alpha = v;
        }
        if o.smooth {
            c.map.smooth = true;
        }
        if let Some(v) = o.bin_width {
            c.map.bin_width = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |e: ferroscope::Error| CliError::Usage(e.to_string());
        self.train_cls.validate().map_err(usage)?;
        self.train_gan.validate().map_err(usage)?;
        self.catalog().map_err(usage)?;
        if !(self.svm.nu > 0.0 && self.svm.nu <= 1.0) {
            return Err(CliError::Usage(format!("nu {} outside (0, 1]", self.svm.nu)));
        }
        if !(0.0..=1.0).contains(&self.map.alpha) {
            return Err(CliError::Usage(format!("alpha {} outside [0, 1]", self.map.alpha)));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn catalog(&self) -> ferroscope::Result<ClassCatalog> {
        let base = match self.classes.catalog {
            CatalogName::Steel => ClassCatalog::steel_strip(),
            CatalogName::Painted => ClassCatalog::painted_steel(),
        };
        match &self.classes.anomalous {
            None => Ok(base),
            Some(spec) => {
                let anomalous = base.parse_subset(spec)?;
                ClassCatalog::new(base.names.clone(), anomalous, base.roi.clone(), base.background.clone())
            }
        }
    }

    pub fn net_config(&self) -> NetConfig {
        match (&self.net.custom, self.net.preset) {
            (Some(c), _) => c.clone(),
            (None, Preset::Desk) => NetConfig::desk(),
            (None, Preset::PaperScale) => NetConfig::paper_scale(),
        }
    }

    /// The architecture, checked against the tile side.
    pub fn tile_net_config(&self) -> Result<NetConfig, CliError> {
        let net = self.net_config();
        if net.input_side != self.tiling.side {
            return Err(CliError::Usage(format!(
                "tile side {} does not match the network input side {}",
                self.tiling.side, net.input_side
            )));
        }
        Ok(net)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# unserializable configuration: {e}\n"))
    }
}
