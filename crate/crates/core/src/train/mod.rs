//! Training loop, checkpoints, evaluation and k-fold cross-validation.

mod checkpoint;
mod history;
mod kfold;
mod metrics;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use history::{history_csv, parse_history, write_history, EpochRecord, HISTORY_HEADER};
pub use kfold::{run_kfold, write_fold_plan, FoldResult, KFoldConfig, KFoldOutcome};
pub use metrics::{argmax, f1_score, write_predictions, ClassMetrics, EvalReport, Prediction};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::UnionNet;
use crate::data::{
    augment_batch, batch_iter, seeded_rng, subtract_channel_means, AugmentPolicy, Dataset,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::optim::{nadam_step, NadamConfig, NadamState, PlateauConfig, PlateauController};
use crate::tensor::softmax_cross_entropy;
use history::HistoryWriter;

pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: NadamConfig,
    pub plateau: PlateauConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
}

impl TrainConfig {
    /// CIFAR-10 settings: Nadam lr 0.01 β1 0.5, plateau factor 0.9, 100 epochs.
    pub fn cifar10() -> Self {
        TrainConfig {
            optimizer: NadamConfig {
                beta1: 0.5,
                ..NadamConfig::default()
            },
            plateau: PlateauConfig::default(),
            epochs: 100,
            batch_size: 32,
            seed: 0,
            augment: AugmentPolicy::None,
        }
    }

    /// Flower-folder settings: Nadam lr 0.01 β1 0.9, plateau factor 0.8, 37 epochs.
    pub fn image_folder() -> Self {
        TrainConfig {
            optimizer: NadamConfig::default(),
            plateau: PlateauConfig {
                factor: 0.8,
                ..PlateauConfig::default()
            },
            epochs: 37,
            ..Self::cifar10()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.plateau.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shuffle/augmentation seed for one epoch, so any epoch can be replayed
/// without running the ones before it.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Inference-mode evaluation over `indices`, inputs shifted by `means`.
pub fn evaluate(
    net: &UnionNet,
    data: &Dataset,
    indices: &[usize],
    means: &[f32],
    batch_size: usize,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if indices.is_empty() {
        return Err(Error::Validation(
            "cannot evaluate an empty sample set".into(),
        ));
    }
    if data.num_classes != net.config().num_classes {
        return Err(Error::Validation(format!(
            "model has {} classes, dataset has {}",
            net.config().num_classes,
            data.num_classes
        )));
    }
    let mut predictions = Vec::with_capacity(indices.len());
    let mut loss_sum = 0.0f64;
    let mut pos = 0;
    for (mut x, labels) in batch_iter(data, indices, batch_size, None)? {
        subtract_channel_means(&mut x, means)?;
        let logits = net.predict(&x)?;
        let sm = softmax_cross_entropy(&logits, &labels)?;
        loss_sum += sm.loss as f64 * labels.len() as f64;
        let k = net.config().num_classes;
        for (row, &label) in logits.data().chunks_exact(k).zip(&labels) {
            predictions.push(Prediction {
                index: indices[pos],
                label,
                predicted: argmax(row),
            });
            pos += 1;
        }
    }
    let mut report = EvalReport::from_predictions(&predictions, &data.class_names)?;
    report.loss = Some(loss_sum / indices.len() as f64);
    Ok((report, predictions))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Model state after `best_epoch` (initial weights when no epoch ran).
    pub best_net: UnionNet,
    pub channel_means: Vec<f32>,
}

struct RunState {
    epoch: usize,
    optimizer: NadamState,
    scheduler: PlateauController,
    best_val_acc: f64,
    best_epoch: usize,
    best_net: UnionNet,
    history: Vec<EpochRecord>,
    means: Vec<f32>,
}

impl RunState {
    fn checkpoint(&self, net: &UnionNet, cfg: &TrainConfig, data: &Dataset) -> Checkpoint {
        Checkpoint {
            net: net.clone(),
            epoch: self.epoch,
            config: *cfg,
            input_height: data.height,
            input_width: data.width,
            channel_means: self.means.clone(),
            optimizer: self.optimizer.clone(),
            scheduler: self.scheduler.state,
            best_val_acc: self.best_val_acc,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
        }
    }
}

fn check_inputs(
    net: &UnionNet,
    data: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    split.validate(data.len())?;
    let nc = net.config();
    if nc.in_channels != data.channels || nc.num_classes != data.num_classes {
        return Err(Error::Validation(format!(
            "model expects {} channels / {} classes, dataset has {} / {}",
            nc.in_channels, nc.num_classes, data.channels, data.num_classes
        )));
    }
    if cfg.epochs > 0 && (split.train.is_empty() || split.val.is_empty()) {
        return Err(Error::Validation(format!(
            "training needs non-empty train and validation splits (got {} / {})",
            split.train.len(),
            split.val.len()
        )));
    }
    Ok(())
}

/// Trains `net` in place from scratch for `cfg.epochs` epochs.
///
/// With an output directory, `history.csv` gains one flushed row per epoch,
/// `last.ckpt` is rewritten after every epoch and `best.ckpt` whenever the
/// validation accuracy strictly improves.
pub fn train(
    net: &mut UnionNet,
    data: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    check_inputs(net, data, split, cfg)?;
    let state = RunState {
        epoch: 0,
        optimizer: NadamState::for_net(net),
        scheduler: PlateauController::new(cfg.plateau, cfg.optimizer.lr),
        best_val_acc: f64::NEG_INFINITY,
        best_epoch: 0,
        best_net: net.clone(),
        history: Vec::new(),
        means: data.channel_means(&split.train),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = state.checkpoint(net, cfg, data);
        ckpt.save(dir.join(BEST_CHECKPOINT))?;
        ckpt.save(dir.join(LAST_CHECKPOINT))?;
    }
    run(net, data, split, cfg, state, out_dir, on_epoch)
}

/// Continues a run from `ckpt` up to `epochs` total epochs. The data and
/// split must be the ones the checkpoint was trained on.
pub fn resume(
    ckpt: Checkpoint,
    data: &Dataset,
    split: &SplitSpec,
    epochs: usize,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(UnionNet, TrainOutcome)> {
    let cfg = TrainConfig {
        epochs,
        ..ckpt.config
    };
    let mut net = ckpt.net;
    check_inputs(&net, data, split, &cfg)?;
    if (data.height, data.width) != (ckpt.input_height, ckpt.input_width) {
        return Err(Error::Validation(format!(
            "checkpoint was trained on {}×{} inputs, dataset has {}×{}",
            ckpt.input_height, ckpt.input_width, data.height, data.width
        )));
    }
    let best_net = match out_dir.map(|d| d.join(BEST_CHECKPOINT)) {
        Some(p) if p.exists() => Checkpoint::load(p)?.net,
        _ => net.clone(),
    };
    let state = RunState {
        epoch: ckpt.epoch,
        optimizer: ckpt.optimizer,
        scheduler: PlateauController {
            cfg: cfg.plateau,
            state: ckpt.scheduler,
        },
        best_val_acc: ckpt.best_val_acc,
        best_epoch: ckpt.best_epoch,
        best_net,
        history: ckpt.history,
        means: ckpt.channel_means,
    };
    let outcome = run(&mut net, data, split, &cfg, state, out_dir, on_epoch)?;
    Ok((net, outcome))
}

fn run(
    net: &mut UnionNet,
    data: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    mut st: RunState,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut writer = match out_dir {
        Some(dir) => Some(HistoryWriter::create(&dir.join(HISTORY_FILE), &st.history)?),
        None => None,
    };
    let k = net.config().num_classes;
    while st.epoch < cfg.epochs {
        let epoch = st.epoch + 1;
        let lr = st.scheduler.lr();
        let opt_cfg = NadamConfig {
            lr,
            ..cfg.optimizer
        };
        let seed = epoch_seed(cfg.seed, epoch);
        let mut aug_rng = seeded_rng(seed, 5);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, (mut x, labels)) in
            batch_iter(data, &split.train, cfg.batch_size, Some(seed))?.enumerate()
        {
            augment_batch(&mut x, &mut aug_rng, cfg.augment);
            subtract_channel_means(&mut x, &st.means)?;
            let (logits, cache) = net.forward(&x, true)?;
            let sm = softmax_cross_entropy(&logits, &labels)?;
            if !sm.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} batch {b}: training loss is {}",
                    sm.loss
                )));
            }
            loss_sum += sm.loss as f64 * labels.len() as f64;
            correct += sm
                .probs
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            let grads = net.backward(&cache, &sm.grad_logits)?;
            nadam_step(
                &mut net.trainable_params_mut(),
                &grads.arrays,
                &mut st.optimizer,
                &opt_cfg,
            )
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch} batch {b}: {m}")),
                other => other,
            })?;
        }
        let (val, _) = evaluate(net, data, &split.val, &st.means, cfg.batch_size)?;
        let n = split.train.len() as f64;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: val.loss.expect("evaluate sets loss"),
            val_acc: val.accuracy,
            lr,
        };
        st.scheduler.update(rec.val_acc);
        st.history.push(rec);
        st.epoch = epoch;
        let improved = rec.val_acc > st.best_val_acc;
        if improved {
            st.best_val_acc = rec.val_acc;
            st.best_epoch = epoch;
            st.best_net = net.clone();
        }
        if let Some(dir) = out_dir {
            let ckpt = st.checkpoint(net, cfg, data);
            if improved {
                ckpt.save(dir.join(BEST_CHECKPOINT))?;
            }
            ckpt.save(dir.join(LAST_CHECKPOINT))?;
        }
        if let Some(w) = writer.as_mut() {
            w.append(&rec)?;
        }
        on_epoch(&rec);
    }
    Ok(TrainOutcome {
        history: st.history,
        best_epoch: st.best_epoch,
        best_val_acc: st.best_val_acc,
        best_net: st.best_net,
        channel_means: st.means,
    })
}
