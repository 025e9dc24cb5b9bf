//! Run configuration: a flat text file of `key = value` lines. `#` starts a
//! comment; blank lines are ignored. Unset keys take per-dataset defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use unionnet::arch::{DEFAULT_WIDTH, MAX_WIDTH};
use unionnet::data::AugmentPolicy;
use unionnet::optim::{NadamConfig, PlateauConfig};
use unionnet::train::{KFoldConfig, TrainConfig};

/// A problem with the configuration, tied to the key that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: field `{}`: {}", self.field, self.msg)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    ImageFolder,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::ImageFolder => "image-folder",
        })
    }
}

/// Every key a config file may set, in manifest order.
pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "out_dir",
    "width",
    "num_classes",
    "input_size",
    "subset_per_class",
    "val_per_class",
    "test_per_class",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "schedule_decay",
    "plateau_factor",
    "plateau_patience",
    "plateau_min_delta",
    "plateau_cooldown",
    "min_lr",
    "epochs",
    "batch_size",
    "seed",
    "augment",
    "jobs",
];

/// Raw key/value pairs as read from a file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::new(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, found {line:?}"),
                ));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::new(k, "unknown key"));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::new(k, "set more than once"));
            }
        }
        Ok(RawConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| ConfigError::new(key, format!("{v:?}: {e}")))
            })
            .transpose()
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub width: usize,
    /// Required class count; `None` for an image folder means "whatever the
    /// folder holds".
    pub num_classes: Option<usize>,
    pub input_size: usize,
    /// CIFAR-10 only: draw this many training images per class (0 = all).
    pub subset_per_class: usize,
    pub val_per_class: usize,
    /// CIFAR-10 only: cap on test images per class (0 = all).
    pub test_per_class: usize,
    pub train: TrainConfig,
    pub jobs: usize,
}

fn check<T: PartialOrd + fmt::Display + Copy>(
    field: &str,
    v: T,
    ok: bool,
    what: &str,
) -> Result<T, ConfigError> {
    if ok {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("{v} {what}")))
    }
}

impl RunConfig {
    /// Applies defaults and validates. Paths are not checked here; see
    /// [`RunConfig::require_data_dir`].
    pub fn resolve(raw: &RawConfig) -> Result<Self, ConfigError> {
        let dataset = match raw.values.get("dataset").map(String::as_str) {
            Some("cifar10") => DatasetKind::Cifar10,
            Some("image-folder") => DatasetKind::ImageFolder,
            Some(other) => {
                return Err(ConfigError::new(
                    "dataset",
                    format!("{other:?} is not one of cifar10, image-folder"),
                ))
            }
            None => {
                return Err(ConfigError::new(
                    "dataset",
                    "missing (cifar10 or image-folder)",
                ))
            }
        };
        let base = match dataset {
            DatasetKind::Cifar10 => TrainConfig::cifar10(),
            DatasetKind::ImageFolder => TrainConfig::image_folder(),
        };
        let default_input = match dataset {
            DatasetKind::Cifar10 => 32,
            DatasetKind::ImageFolder => 64,
        };
        let width = raw.get("width")?.unwrap_or(DEFAULT_WIDTH);
        check(
            "width",
            width,
            (1..=MAX_WIDTH).contains(&width),
            &format!("outside 1..={MAX_WIDTH}"),
        )?;
        let num_classes: Option<usize> = raw.get("num_classes")?;
        if let Some(k) = num_classes {
            check("num_classes", k, k >= 1, "must be at least 1")?;
            if dataset == DatasetKind::Cifar10 && k != 10 {
                return Err(ConfigError::new(
                    "num_classes",
                    format!("CIFAR-10 has 10 classes, not {k}"),
                ));
            }
        }
        let input_size = raw.get("input_size")?.unwrap_or(default_input);
        check(
            "input_size",
            input_size,
            input_size >= 2 && input_size % 2 == 0,
            "must be even and at least 2",
        )?;
        if dataset == DatasetKind::Cifar10 && input_size != 32 {
            return Err(ConfigError::new("input_size", "CIFAR-10 images are 32×32"));
        }
        let optimizer = NadamConfig {
            lr: raw.get("lr")?.unwrap_or(base.optimizer.lr),
            beta1: raw.get("beta1")?.unwrap_or(base.optimizer.beta1),
            beta2: raw.get("beta2")?.unwrap_or(base.optimizer.beta2),
            epsilon: raw.get("epsilon")?.unwrap_or(base.optimizer.epsilon),
            schedule_decay: raw
                .get("schedule_decay")?
                .unwrap_or(base.optimizer.schedule_decay),
        };
        let plateau = PlateauConfig {
            factor: raw.get("plateau_factor")?.unwrap_or(base.plateau.factor),
            patience: raw
                .get("plateau_patience")?
                .unwrap_or(base.plateau.patience),
            min_delta: raw
                .get("plateau_min_delta")?
                .unwrap_or(base.plateau.min_delta),
            cooldown: raw
                .get("plateau_cooldown")?
                .unwrap_or(base.plateau.cooldown),
            min_lr: raw.get("min_lr")?.unwrap_or(base.plateau.min_lr),
        };
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        check(
            "lr",
            optimizer.lr,
            optimizer.lr > 0.0 && optimizer.lr.is_finite(),
            "must be positive",
        )?;
        check(
            "beta1",
            optimizer.beta1,
            open_unit(optimizer.beta1),
            "must lie in (0, 1)",
        )?;
        check(
            "beta2",
            optimizer.beta2,
            open_unit(optimizer.beta2),
            "must lie in (0, 1)",
        )?;
        check(
            "epsilon",
            optimizer.epsilon,
            optimizer.epsilon > 0.0,
            "must be positive",
        )?;
        check(
            "schedule_decay",
            optimizer.schedule_decay,
            optimizer.schedule_decay >= 0.0,
            "must be non-negative",
        )?;
        check(
            "plateau_factor",
            plateau.factor,
            open_unit(plateau.factor),
            "must lie in (0, 1)",
        )?;
        check(
            "plateau_patience",
            plateau.patience,
            plateau.patience >= 1,
            "must be at least 1",
        )?;
        check(
            "plateau_min_delta",
            plateau.min_delta,
            plateau.min_delta >= 0.0,
            "must be non-negative",
        )?;
        check(
            "min_lr",
            plateau.min_lr,
            plateau.min_lr >= 0.0,
            "must be non-negative",
        )?;
        let batch_size = raw.get("batch_size")?.unwrap_or(base.batch_size);
        check(
            "batch_size",
            batch_size,
            batch_size >= 1,
            "must be at least 1",
        )?;
        let augment = match raw.values.get("augment") {
            Some(v) => v
                .parse::<AugmentPolicy>()
                .map_err(|e| ConfigError::new("augment", e.to_string()))?,
            None => base.augment,
        };
        let train = TrainConfig {
            optimizer,
            plateau,
            epochs: raw.get("epochs")?.unwrap_or(base.epochs),
            batch_size,
            seed: raw.get("seed")?.unwrap_or(base.seed),
            augment,
        };
        let jobs = raw.get("jobs")?.unwrap_or(1);
        check("jobs", jobs, jobs >= 1, "must be at least 1")?;
        let val_default = match dataset {
            DatasetKind::Cifar10 => 1000,
            // 0 means one tenth of each class
            DatasetKind::ImageFolder => 0,
        };
        Ok(RunConfig {
            dataset,
            data_dir: raw.values.get("data_dir").map(PathBuf::from),
            out_dir: raw
                .values
                .get("out_dir")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(format!("runs/{dataset}"))),
            width,
            num_classes,
            input_size,
            subset_per_class: raw.get("subset_per_class")?.unwrap_or(0),
            val_per_class: raw.get("val_per_class")?.unwrap_or(val_default),
            test_per_class: raw.get("test_per_class")?.unwrap_or(0),
            train,
            jobs,
        })
    }

    pub fn require_data_dir(&self) -> Result<&Path, ConfigError> {
        let dir = self.data_dir.as_deref().ok_or_else(|| {
            ConfigError::new("data_dir", "missing (set it in the config or pass --data)")
        })?;
        if !dir.is_dir() {
            return Err(ConfigError::new(
                "data_dir",
                format!("{} does not exist", dir.display()),
            ));
        }
        Ok(dir)
    }

    pub fn kfold(&self) -> KFoldConfig {
        KFoldConfig {
            train: self.train,
            width: self.width,
            jobs: self.jobs,
        }
    }

    /// The effective configuration in the input format; feeding it back
    /// reproduces the run.
    pub fn manifest(&self) -> String {
        let t = &self.train;
        let mut lines = vec![
            ("dataset", self.dataset.to_string()),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("out_dir", self.out_dir.display().to_string()),
            ("width", self.width.to_string()),
        ];
        if let Some(k) = self.num_classes {
            lines.push(("num_classes", k.to_string()));
        }
        lines.extend([
            ("input_size", self.input_size.to_string()),
            ("subset_per_class", self.subset_per_class.to_string()),
            ("val_per_class", self.val_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("lr", t.optimizer.lr.to_string()),
            ("beta1", t.optimizer.beta1.to_string()),
            ("beta2", t.optimizer.beta2.to_string()),
            ("epsilon", t.optimizer.epsilon.to_string()),
            ("schedule_decay", t.optimizer.schedule_decay.to_string()),
            ("plateau_factor", t.plateau.factor.to_string()),
            ("plateau_patience", t.plateau.patience.to_string()),
            ("plateau_min_delta", t.plateau.min_delta.to_string()),
            ("plateau_cooldown", t.plateau.cooldown.to_string()),
            ("min_lr", t.plateau.min_lr.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("seed", t.seed.to_string()),
            ("augment", t.augment.to_string()),
            ("jobs", self.jobs.to_string()),
        ]);
        let mut s = String::from("# effective configuration\n");
        for (k, v) in lines {
            if k == "data_dir" && v.is_empty() {
                continue;
            }
            s += &format!("{k} = {v}\n");
        }
        s
    }
}
