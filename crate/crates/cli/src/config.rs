//! Run configuration: one TOML table per module.

use aet_core::data::{load_cifar10_binary, load_idx_dataset, synth_shapes, Dataset};
use aet_core::eval::{ProbeConfig, ProbeHead, DEFAULT_K};
use aet_core::nets::NetConfig;
use aet_core::train::{Mode, TrainConfig};
use aet_core::xform::{AffineSpec, TransformSpec};
use aet_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { train_size: 5000, test_size: 1000, image_size: 32, classes: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarConfig {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default)]
    pub class_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic(SynthConfig),
    Cifar10(CifarConfig),
    Idx(IdxConfig),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SynthConfig::default())
    }
}

impl DataConfig {
    /// Train and test splits. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<(Dataset, Dataset)> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        match self {
            DataConfig::Synthetic(s) => {
                if s.train_size == 0 || s.test_size == 0 {
                    return Err(Error::Config("synthetic train_size and test_size must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let all = synth_shapes(s.train_size + s.test_size, s.image_size, s.classes, &mut rng)?;
                all.split_at(s.train_size)
            }
            DataConfig::Cifar10(c) => Ok((load_cifar10_binary(&at(&c.train))?, load_cifar10_binary(&at(&c.test))?)),
            DataConfig::Idx(c) => Ok((
                load_idx_dataset(&at(&c.train_images), Some(&at(&c.train_labels)), c.class_count)?,
                load_idx_dataset(&at(&c.test_images), Some(&at(&c.test_labels)), c.class_count)?,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: Vec<usize>,
    pub head: ProbeHead,
    pub per_class: Vec<usize>,
    pub repeats: usize,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K.to_vec(),
            head: ProbeHead::Linear,
            per_class: vec![1, 5, 10, 20],
            repeats: 3,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub xform: TransformSpec,
    pub nets: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            xform: TransformSpec::Affine(AffineSpec::paper()),
            nets: NetConfig {
                input_channels: 1,
                widths: [8, 16],
                pool_grid: 2,
                decoder_hidden: 64,
                classifier_width: 16,
                ..NetConfig::default()
            },
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.nets.validate()?;
        self.train.validate()?;
        self.train.check_spec(&self.xform)?;
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::Config("eval.k must list positive neighbor counts".into()));
        }
        if self.eval.repeats == 0 {
            return Err(Error::Config("eval.repeats must be positive".into()));
        }
        Ok(())
    }

    /// Replaces the schedule, batch layout and epochs with the full-length
    /// preset for the current mode.
    pub fn paper_scale(&mut self) {
        let t = &self.train;
        self.train = TrainConfig {
            seed: t.seed,
            lambda: t.lambda,
            entmin_weight: t.entmin_weight,
            checkpoint_every: t.checkpoint_every,
            labels_per_class: t.labels_per_class,
            ..TrainConfig::paper(t.mode)
        };
    }

    pub fn apply_mode(&mut self, mode: Mode) {
        self.train.mode = mode;
        if matches!(mode, Mode::Sat | Mode::Supervised) && self.train.labeled_per_batch == 0 {
            self.train.labeled_per_batch = (self.train.batch_size / 4).max(1);
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}
