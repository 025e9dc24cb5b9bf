//! Command implementations behind the `unionnet` binary.
//!
//! Each command returns `Ok(())` or a [`CliError`] whose
//! [`exit_code`](CliError::exit_code) is 2 for configuration and usage
//! problems and 1 for failures while running.

pub mod config;

use std::path::{Path, PathBuf};

use unionnet::arch::{model_report, NetConfig, UnionNet};
use unionnet::data::{
    load_cifar10, load_cifar_batch, load_image_folder, make_fold_plan, split_cifar10,
    stratified_split, stratified_subset, Dataset, FoldPlan, SplitSpec, FOLD_COUNT,
};
use unionnet::train::{
    evaluate, resume, run_kfold, train, write_predictions, Checkpoint, EpochRecord, EvalReport,
    TrainOutcome,
};

pub use config::{ConfigError, DatasetKind, RawConfig, RunConfig};

pub const MANIFEST_FILE: &str = "run_manifest.txt";

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Usage(String),
    Runtime(unionnet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<unionnet::Error> for CliError {
    fn from(e: unionnet::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

pub fn load_config(path: &Path, ov: &Overrides) -> CliResult<RunConfig> {
    let mut raw = RawConfig::load(path)?;
    if let Some(d) = &ov.data {
        raw.set("data_dir", d.display().to_string());
    }
    if let Some(s) = ov.seed {
        raw.set("seed", s.to_string());
    }
    if let Some(j) = ov.jobs {
        raw.set("jobs", j.to_string());
    }
    Ok(RunConfig::resolve(&raw)?)
}

/// Training data, its train/validation split, and the held-out test set.
pub struct Prepared {
    pub data: Dataset,
    pub split: SplitSpec,
    /// Separate test set (CIFAR-10); `None` means `split.test` over `data`.
    pub test_set: Option<Dataset>,
    pub test_indices: Vec<usize>,
}

impl Prepared {
    pub fn test_data(&self) -> &Dataset {
        self.test_set.as_ref().unwrap_or(&self.data)
    }
}

fn check_class_count(cfg: &RunConfig, found: usize) -> CliResult<()> {
    match cfg.num_classes {
        Some(k) if k != found => Err(ConfigError::new(
            "num_classes",
            format!("config says {k}, the dataset has {found} classes"),
        )
        .into()),
        _ => Ok(()),
    }
}

fn load_folder(cfg: &RunConfig) -> CliResult<Dataset> {
    let dir = cfg.require_data_dir()?;
    let data = load_image_folder(dir, cfg.input_size)?;
    check_class_count(cfg, data.num_classes)?;
    Ok(data)
}

/// Loads the dataset named by `cfg` and rebuilds its splits; the same config
/// always yields the same splits.
pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let seed = cfg.train.seed;
    match cfg.dataset {
        DatasetKind::Cifar10 => {
            let dir = cfg.require_data_dir()?;
            let cifar = load_cifar10(dir)?;
            let split = if cfg.subset_per_class == 0 && cfg.val_per_class == 1000 {
                split_cifar10(&cifar.train, seed)?
            } else {
                let pool = if cfg.subset_per_class == 0 {
                    (0..cifar.train.len()).collect()
                } else {
                    stratified_subset(&cifar.train, cfg.subset_per_class, seed)?
                };
                stratified_split(&cifar.train, &pool, cfg.val_per_class, 0, seed)?
            };
            let test_indices = if cfg.test_per_class == 0 {
                (0..cifar.test.len()).collect()
            } else {
                stratified_subset(&cifar.test, cfg.test_per_class, seed)?
            };
            Ok(Prepared {
                data: cifar.train,
                split,
                test_set: Some(cifar.test),
                test_indices,
            })
        }
        DatasetKind::ImageFolder => {
            let data = load_folder(cfg)?;
            let all: Vec<usize> = (0..data.len()).collect();
            let per_class = data.class_counts(&all).into_iter().min().unwrap_or(0);
            let held_out = if cfg.val_per_class == 0 {
                (per_class / 10).max(1)
            } else {
                cfg.val_per_class
            };
            let split = stratified_split(&data, &all, held_out, held_out, seed)?;
            let test_indices = split.test.clone();
            Ok(Prepared {
                data,
                split,
                test_set: None,
                test_indices,
            })
        }
    }
}

fn progress(prefix: &str, total: usize, r: &EpochRecord) {
    eprintln!(
        "{prefix}epoch {}/{total}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.6}",
        r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
    );
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Runtime(unionnet::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    std::fs::write(path, body).map_err(|e| {
        CliError::Runtime(unionnet::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Trains per the config (or continues from `checkpoint`), then evaluates the
/// best-validation model on the test set.
pub fn cmd_train(
    config: &Path,
    ov: &Overrides,
    checkpoint: Option<&Path>,
) -> CliResult<TrainOutcome> {
    let cfg = load_config(config, ov)?;
    cfg.require_data_dir()?;
    let out = cfg.out_dir.as_path();
    create_dir(out)?;
    write_file(&out.join(MANIFEST_FILE), &cfg.manifest())?;
    let prepared = prepare(&cfg)?;
    let total = cfg.train.epochs;
    let mut log = |r: &EpochRecord| progress("", total, r);
    let outcome = match checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.net.config().width != cfg.width {
                return Err(ConfigError::new(
                    "width",
                    format!(
                        "config says {}, checkpoint has {}",
                        cfg.width,
                        ckpt.net.config().width
                    ),
                )
                .into());
            }
            eprintln!("resuming from epoch {}", ckpt.epoch);
            resume(
                ckpt,
                &prepared.data,
                &prepared.split,
                total,
                Some(out),
                &mut log,
            )?
            .1
        }
        None => {
            let net_cfg = NetConfig {
                in_channels: prepared.data.channels,
                width: cfg.width,
                num_classes: prepared.data.num_classes,
            };
            let mut net = UnionNet::new(net_cfg, cfg.train.seed)?;
            train(
                &mut net,
                &prepared.data,
                &prepared.split,
                &cfg.train,
                Some(out),
                &mut log,
            )?
        }
    };
    let (report, predictions) = evaluate(
        &outcome.best_net,
        prepared.test_data(),
        &prepared.test_indices,
        &outcome.channel_means,
        cfg.train.batch_size,
    )?;
    report.write(out.join("report"))?;
    write_predictions(&predictions, out.join("test_predictions.csv"))?;
    println!(
        "best epoch: {} (val_acc {:.4})",
        outcome.best_epoch, outcome.best_val_acc
    );
    print!("{}", report.render_text());
    Ok(outcome)
}

fn has_cifar_test_batch(dir: &Path) -> Option<PathBuf> {
    [
        dir.join("test_batch.bin"),
        dir.join("cifar-10-batches-bin").join("test_batch.bin"),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

/// Evaluates a checkpoint. With a config, the config's test split is used;
/// otherwise `data` is either a CIFAR-10 directory (its test batch) or an
/// image folder (every image).
pub fn cmd_eval(
    checkpoint: &Path,
    data: Option<&Path>,
    config: Option<&Path>,
    ov: &Overrides,
) -> CliResult<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (dataset, indices) = match config {
        Some(path) => {
            let cfg = load_config(path, ov)?;
            let p = prepare(&cfg)?;
            let indices = p.test_indices.clone();
            (p.test_set.unwrap_or(p.data), indices)
        }
        None => {
            let dir =
                data.ok_or_else(|| CliError::Usage("eval needs --data or --config".into()))?;
            if !dir.is_dir() {
                return Err(ConfigError::new(
                    "--data",
                    format!("{} does not exist", dir.display()),
                )
                .into());
            }
            let d = match has_cifar_test_batch(dir) {
                Some(batch) => load_cifar_batch(batch)?,
                None => load_image_folder(dir, ckpt.input_height)?,
            };
            let all = (0..d.len()).collect();
            (d, all)
        }
    };
    let model_classes = ckpt.net.config().num_classes;
    if model_classes != dataset.num_classes {
        return Err(CliError::Usage(format!(
            "checkpoint has {model_classes} classes, dataset has {}",
            dataset.num_classes
        )));
    }
    if (dataset.height, dataset.width) != (ckpt.input_height, ckpt.input_width) {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}×{} inputs, dataset has {}×{}",
            ckpt.input_height, ckpt.input_width, dataset.height, dataset.width
        )));
    }
    let (report, _) = evaluate(
        &ckpt.net,
        &dataset,
        &indices,
        &ckpt.channel_means,
        ckpt.config.batch_size,
    )?;
    print!("{}", report.render_text());
    Ok(report)
}

fn fold_table(plan: &FoldPlan) -> String {
    let mut s = String::from("fold,test_decile,val_decile,train,val,test\n");
    for f in 0..FOLD_COUNT {
        let split = plan.fold(f).expect("fold in range");
        s += &format!(
            "{f},{},{},{},{},{}\n",
            FoldPlan::test_decile(f),
            FoldPlan::val_decile(f),
            split.train.len(),
            split.val.len(),
            split.test.len()
        );
    }
    s
}

/// Ten-fold cross-validation over an image folder.
pub fn cmd_kfold(config: &Path, ov: &Overrides) -> CliResult<unionnet::train::KFoldOutcome> {
    let cfg = load_config(config, ov)?;
    if cfg.dataset != DatasetKind::ImageFolder {
        return Err(ConfigError::new("dataset", "k-fold runs need an image-folder dataset").into());
    }
    cfg.require_data_dir()?;
    let out = cfg.out_dir.as_path();
    create_dir(out)?;
    write_file(&out.join(MANIFEST_FILE), &cfg.manifest())?;
    let data = load_folder(&cfg)?;
    let plan = make_fold_plan(&data, cfg.train.seed)?;
    write_file(&out.join("folds.csv"), &fold_table(&plan))?;
    let total = cfg.train.epochs;
    let log = |fold: usize, r: &EpochRecord| progress(&format!("fold {fold}: "), total, r);
    let outcome = run_kfold(&data, &plan, &cfg.kfold(), Some(out), &log)?;
    print!("{}", outcome.render_summary());
    Ok(outcome)
}

/// Prints the model report. Without a config the CIFAR-10 defaults apply.
pub fn cmd_inspect(config: Option<&Path>) -> CliResult<unionnet::arch::ModelReport> {
    let mut raw = match config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    if !raw.values.contains_key("dataset") {
        raw.set("dataset", "cifar10");
    }
    let cfg = RunConfig::resolve(&raw)?;
    let classes = cfg.num_classes.unwrap_or(match cfg.dataset {
        DatasetKind::Cifar10 => 10,
        DatasetKind::ImageFolder => 17,
    });
    let net = UnionNet::zeros(NetConfig::new(cfg.width, classes))?;
    let report = model_report(&net);
    print!("{}", report.render());
    Ok(report)
}
