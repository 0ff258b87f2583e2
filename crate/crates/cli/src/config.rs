//! Run configuration: one TOML file plus flag overrides.

use std::path::{Path, PathBuf};

use polypseg_core::dataset::{Layout, SynthConfig};
use polypseg_core::metrics::DetectionRule;
use polypseg_core::network::{MiniArch, MiniConfig, TrainConfig, Variant};
use polypseg_core::sfs::{CameraModel, SfsConfig};
use polypseg_core::tensor::LossNorm;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    #[default]
    Rgb,
    Rgbd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NetVariant {
    #[default]
    Plain,
    Bn,
    /// The residual mini network; batch normalization sits inside its blocks.
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthSource {
    /// Depth maps shipped with the dataset.
    #[default]
    Dataset,
    /// Depth recovered by shape-from-shading from each frame.
    Sfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    #[default]
    Network,
    /// Ground-truth masks as predictions.
    Oracle,
    /// No polyp pixels at all.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset root holding the layout directories.
    pub root: Option<PathBuf>,
    pub layout: Layout,
    /// Generated in memory instead of read from `root`.
    pub synthetic: Option<SynthConfig>,
    /// Square side every frame is resized to before augmentation.
    pub resize: Option<usize>,
    /// Drop frames without any polyp pixel.
    pub polyp_only: bool,
    pub depth: DepthSource,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: None,
            layout: Layout::default(),
            synthetic: None,
            resize: None,
            polyp_only: false,
            depth: DepthSource::Dataset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// `mini-alex` or `mini-vgg`; ignored by the residual variant.
    pub arch: MiniArch,
    pub variant: NetVariant,
    pub width: usize,
    pub downsample: usize,
    pub input: InputMode,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            arch: MiniArch::MiniAlex,
            variant: NetVariant::Plain,
            width: 8,
            downsample: 8,
            input: InputMode::Rgb,
        }
    }
}

impl NetworkSection {
    pub fn mini(&self) -> (MiniConfig, Variant) {
        let (arch, variant) = match self.variant {
            NetVariant::Plain => (self.arch, Variant::Plain),
            NetVariant::Bn => (self.arch, Variant::Bn),
            NetVariant::Residual => (MiniArch::MiniResidual, Variant::Plain),
        };
        let cfg = MiniConfig {
            arch,
            width: self.width,
            downsample: self.downsample,
            ..Default::default()
        };
        (cfg, variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub patch: Option<usize>,
    pub vertical_flip: bool,
    pub loss_norm: LossNorm,
    pub checkpoint_every: Option<u64>,
    pub divergence_loss: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            iterations: t.iterations,
            patch: t.patch,
            vertical_flip: t.vertical_flip,
            loss_norm: t.loss_norm,
            checkpoint_every: t.checkpoint_every,
            divergence_loss: t.divergence_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfsSection {
    /// Focal length in pixels; `None` uses the image width.
    pub focal: Option<f64>,
    /// Light offset from the optical center, in focal-length units.
    pub light_offset: [f64; 3],
    /// `(col, row)` in pixels; `None` centers it.
    pub principal: Option<[f64; 2]>,
    pub solver: SfsConfig,
    /// Directory of intensity images for the `sfs` command.
    pub images: Option<PathBuf>,
}

impl Default for SfsSection {
    fn default() -> Self {
        SfsSection {
            focal: None,
            light_offset: [0.0; 3],
            principal: None,
            solver: SfsConfig::default(),
            images: None,
        }
    }
}

impl SfsSection {
    pub fn camera(&self, rows: usize, cols: usize) -> CliResult<CameraModel> {
        let focal = self.focal.unwrap_or(cols as f64);
        let cam = match self.principal {
            Some(p) => CameraModel::new(focal, self.light_offset, p),
            None => CameraModel::centered(rows, cols, focal, self.light_offset),
        };
        cam.map_err(CliError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub predictor: Predictor,
    pub detection: DetectionRule,
    /// Number of image | heat map | mask panels written.
    pub figures: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoint: None,
            predictor: Predictor::Network,
            detection: DetectionRule::Centroid,
            figures: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds initialization, batch order, augmentation and synthetic data.
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub sfs: SfsSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output: PathBuf::from("out"),
            data: DataSection::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            sfs: SfsSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical text minus the output path, so identical runs written to
    /// different directories share a digest.
    pub fn digest_text(&self) -> String {
        RunConfig {
            output: PathBuf::new(),
            ..self.clone()
        }
        .to_toml()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            iterations: t.iterations,
            patch: t.patch,
            vertical_flip: t.vertical_flip,
            seed: self.seed,
            loss_norm: t.loss_norm,
            checkpoint_every: t.checkpoint_every,
            with_depth: self.network.input == InputMode::Rgbd,
            divergence_loss: t.divergence_loss,
        }
    }

    /// Writes the resolved config to `<output>/config.toml`.
    pub fn echo(&self) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.output).map_err(|e| CliError::io(&self.output, e))?;
        let path = self.output.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Command-line values that replace file values when present.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<NetVariant>)]
    pub variant: Option<NetVariant>,
    #[arg(long, value_parser = parse_enum::<InputMode>)]
    pub input: Option<InputMode>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Intensity image directory for `sfs`.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

impl Overrides {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.output {
            c.output = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.data {
            c.data.root = Some(v.clone());
            c.data.synthetic = None;
        }
        if let Some(v) = self.variant {
            c.network.variant = v;
        }
        if let Some(v) = self.input {
            c.network.input = v;
        }
        if let Some(v) = self.width {
            c.network.width = v;
        }
        if let Some(v) = self.downsample {
            c.network.downsample = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.momentum {
            c.train.momentum = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.patch {
            c.train.patch = Some(v);
        }
        if let Some(v) = self.iterations {
            c.train.iterations = v;
        }
        if let Some(v) = &self.checkpoint {
            c.eval.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.images {
            c.sfs.images = Some(v.clone());
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("seeed = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 0.1").is_err());
        assert!(RunConfig::from_toml("[network]\nvariant = \"deep\"").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[train]\nlr = 0.5\niterations = 7\n").unwrap();
        let o = Overrides {
            config: Some(path),
            lr: Some(0.25),
            variant: Some(NetVariant::Bn),
            ..Default::default()
        };
        let c = o.resolve().unwrap();
        assert_eq!((c.seed, c.train.lr, c.train.iterations), (3, 0.25, 7));
        assert_eq!(c.network.variant, NetVariant::Bn);
    }

    #[test]
    fn digest_ignores_output_directory() {
        let a = RunConfig::default();
        let b = RunConfig {
            output: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.digest_text(), b.digest_text());
        assert_ne!(a.to_toml(), b.to_toml());
    }
}
