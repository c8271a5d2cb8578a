use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar_binary, load_idx, normalize_splits, parse_idx_images, synthetic, CifarVariant, Dataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::kernels::{AdamHyper, BatchNormConfig};
use crate::network::{vgg_micro, LayerSpec};
use crate::schedule::ScheduleConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Generated blobs; the first `n_train` samples train, the rest test.
    Synthetic {
        num_classes: usize,
        n_train: usize,
        n_test: usize,
        image_side: usize,
        #[serde(default = "one")]
        channels: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_blobs")]
        blobs_per_class: usize,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        variant: CifarVariant,
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

fn one() -> usize {
    1
}
fn default_noise() -> f64 {
    0.6
}
fn default_blobs() -> usize {
    3
}

impl DatasetSpec {
    /// `[C, H, W]` of one image. IDX headers are read from disk.
    pub fn input_shape(&self) -> Result<[usize; 3]> {
        match self {
            DatasetSpec::Synthetic {
                channels, image_side, ..
            } => Ok([*channels, *image_side, *image_side]),
            DatasetSpec::Idx { train_images, .. } => {
                use std::io::Read;
                let mut head = Vec::new();
                std::fs::File::open(train_images)?.take(16).read_to_end(&mut head)?;
                // Only the header is present, so the data-length check is
                // skipped by padding a zero-image count.
                head[4..8].copy_from_slice(&0u32.to_be_bytes());
                let (_, rows, cols, _) = parse_idx_images(&head)?;
                Ok([1, rows, cols])
            }
            DatasetSpec::Cifar { .. } => Ok([3, 32, 32]),
        }
    }

    pub fn num_classes(&self) -> Result<usize> {
        match self {
            DatasetSpec::Synthetic { num_classes, .. } => Ok(*num_classes),
            DatasetSpec::Cifar { variant, .. } => Ok(variant.num_classes()),
            DatasetSpec::Idx { .. } => {
                let (train, test) = self.load(0)?;
                Ok(train.num_classes().max(test.num_classes()))
            }
        }
    }

    /// Loads `(train, test)`, both standardized with training statistics.
    pub fn load(&self, run_seed: u64) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test) = match self {
            DatasetSpec::Synthetic {
                num_classes,
                n_train,
                n_test,
                image_side,
                channels,
                noise,
                blobs_per_class,
                seed,
            } => {
                let mut all = synthetic(&SyntheticSpec {
                    num_classes: *num_classes,
                    n: n_train + n_test,
                    image_side: *image_side,
                    channels: *channels,
                    noise: *noise,
                    blobs_per_class: *blobs_per_class,
                    seed: seed.unwrap_or(run_seed),
                })?;
                let test = all.split_off(*n_train)?;
                (all, test)
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx(train_images, train_labels)?;
                let test = load_idx(test_images, test_labels)?;
                let classes = train.num_classes().max(test.num_classes());
                (
                    Dataset::new(train.images().clone(), train.labels().to_vec(), classes)?,
                    Dataset::new(test.images().clone(), test.labels().to_vec(), classes)?,
                )
            }
            DatasetSpec::Cifar { variant, train, test } => {
                (load_cifar_binary(train, *variant)?, load_cifar_binary(test, *variant)?)
            }
        };
        normalize_splits(&mut train, &mut [&mut test]);
        Ok((train, test))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetSpec::Cifar { train, test, .. } => train.iter_mut().chain(test.iter_mut()).for_each(fix),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Layer specs; defaults to VGG-micro for the dataset's class count.
    #[serde(default)]
    pub architecture: Option<Vec<LayerSpec>>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub optimizer: AdamHyper,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub batchnorm: BatchNormConfig,
    /// Where `train` writes when no `--out` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Fill the wall-clock columns of metrics.csv. Off by default so that
    /// repeated runs produce identical files.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_name() -> String {
    "run".into()
}
fn default_batch() -> usize {
    32
}
fn default_eval_batch() -> usize {
    256
}
fn default_checkpoint_every() -> usize {
    10
}

impl RunConfig {
    /// Parses and validates a JSON document. Errors carry the path of the
    /// offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::from("<root>") } else { path }, e.into_inner().to_string())
        })?;
        cfg.normalize()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths are taken relative to
    /// the file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.dataset.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn normalize(&mut self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        match self.schedule.total_epochs {
            0 => self.schedule.total_epochs = self.epochs,
            e if e != self.epochs => {
                return Err(Error::config(
                    "schedule.total_epochs",
                    format!("{e} differs from epochs = {}", self.epochs),
                ))
            }
            _ => {}
        }
        self.schedule.validate("schedule")?;
        if let DatasetSpec::Synthetic {
            num_classes,
            n_train,
            n_test,
            image_side,
            channels,
            noise,
            blobs_per_class,
            ..
        } = &self.dataset
        {
            let positive = [
                ("num_classes", *num_classes),
                ("n_train", *n_train),
                ("n_test", *n_test),
                ("image_side", *image_side),
                ("channels", *channels),
                ("blobs_per_class", *blobs_per_class),
            ];
            if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
                return Err(Error::config(format!("dataset.{field}"), "must be at least 1"));
            }
            if !(noise.is_finite() && *noise >= 0.0) {
                return Err(Error::config("dataset.noise", "must be finite and non-negative"));
            }
        }
        if let Some(arch) = &self.architecture {
            match arch.last() {
                Some(LayerSpec::Linear { .. }) => {}
                _ => return Err(Error::config("architecture", "must end with a linear layer")),
            }
        }
        Ok(())
    }

    /// The layer specs to build, resolving the default architecture.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        match &self.architecture {
            Some(a) => Ok(a.clone()),
            None => Ok(vgg_micro(self.dataset.num_classes()?)),
        }
    }
}
