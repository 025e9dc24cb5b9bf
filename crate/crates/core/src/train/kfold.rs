use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, write_predictions, EpochRecord, EvalReport, Prediction, TrainConfig};
use crate::arch::{NetConfig, UnionNet};
use crate::data::{Dataset, FoldPlan, FOLD_COUNT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KFoldConfig {
    /// `train.seed` is the base seed; fold `i` uses `base + i` for both
    /// initialization and shuffling.
    pub train: TrainConfig,
    pub width: usize,
    /// Folds trained concurrently.
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_decile: usize,
    pub val_decile: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KFoldOutcome {
    pub folds: Vec<FoldResult>,
    /// Unweighted mean of the per-fold test accuracies.
    pub mean_accuracy: f64,
    /// Metrics over the union of all folds' test predictions.
    pub pooled: EvalReport,
}

impl KFoldOutcome {
    pub fn render_summary(&self) -> String {
        let mut s = String::from("fold  test  val  best_epoch  accuracy\n");
        for f in &self.folds {
            s += &format!(
                "{:>4}  D{:<3}  D{:<2}  {:>10}  {:.4}\n",
                f.fold, f.test_decile, f.val_decile, f.best_epoch, f.report.accuracy
            );
        }
        s += &format!("mean accuracy: {:.4}\n", self.mean_accuracy);
        s
    }
}

/// Writes `index,label,decile` for every sample in the plan.
pub fn write_fold_plan(plan: &FoldPlan, data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut rows: Vec<(usize, usize)> = plan
        .deciles
        .iter()
        .enumerate()
        .flat_map(|(d, members)| members.iter().map(move |&i| (i, d)))
        .collect();
    rows.sort_unstable();
    let mut s = String::from("index,label,decile\n");
    for (i, d) in rows {
        s += &format!("{i},{},{d}\n", data.labels[i]);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn run_fold(
    data: &Dataset,
    plan: &FoldPlan,
    cfg: &KFoldConfig,
    fold: usize,
    out_dir: Option<&Path>,
    on_epoch: &(dyn Fn(usize, &EpochRecord) + Sync),
) -> Result<FoldResult> {
    let split = plan.fold(fold)?;
    let seed = cfg.train.seed.wrapping_add(fold as u64);
    let net_cfg = NetConfig {
        in_channels: data.channels,
        width: cfg.width,
        num_classes: data.num_classes,
    };
    let mut net = UnionNet::new(net_cfg, seed)?;
    let tc = TrainConfig { seed, ..cfg.train };
    let dir = out_dir.map(|d| d.join(format!("fold_{fold}")));
    let outcome = train(&mut net, data, &split, &tc, dir.as_deref(), &mut |r| {
        on_epoch(fold, r)
    })?;
    let (report, predictions) = evaluate(
        &outcome.best_net,
        data,
        &split.test,
        &outcome.channel_means,
        tc.batch_size,
    )?;
    if let Some(dir) = &dir {
        report.write(dir.join("report"))?;
        write_predictions(&predictions, dir.join("predictions.csv"))?;
    }
    Ok(FoldResult {
        fold,
        test_decile: FoldPlan::test_decile(fold),
        val_decile: FoldPlan::val_decile(fold),
        seed,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        report,
        predictions,
    })
}

/// Ten independent trainings, one per fold of `plan`, each evaluated on its
/// test decile with the best-validation weights.
pub fn run_kfold(
    data: &Dataset,
    plan: &FoldPlan,
    cfg: &KFoldConfig,
    out_dir: Option<&Path>,
    on_epoch: &(dyn Fn(usize, &EpochRecord) + Sync),
) -> Result<KFoldOutcome> {
    if cfg.jobs == 0 {
        return Err(Error::Validation("jobs must be at least 1".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_fold_plan(plan, data, dir.join("fold_plan.csv"))?;
    }
    let one = |fold: usize| {
        run_fold(data, plan, cfg, fold, out_dir, on_epoch).map_err(|e| Error::InFold {
            fold,
            source: Box::new(e),
        })
    };
    let folds: Vec<FoldResult> = if cfg.jobs == 1 {
        (0..FOLD_COUNT).map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start {} workers: {e}", cfg.jobs)))?;
        pool.install(|| {
            (0..FOLD_COUNT)
                .into_par_iter()
                .map(one)
                .collect::<Result<_>>()
        })?
    };
    let mean_accuracy = folds.iter().map(|f| f.report.accuracy).sum::<f64>() / folds.len() as f64;
    let all: Vec<Prediction> = folds
        .iter()
        .flat_map(|f| f.predictions.iter().copied())
        .collect();
    let pooled = EvalReport::from_predictions(&all, &data.class_names)?;
    let outcome = KFoldOutcome {
        folds,
        mean_accuracy,
        pooled,
    };
    if let Some(dir) = out_dir {
        let txt = dir.join("summary.txt");
        std::fs::write(&txt, outcome.render_summary()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join("summary.json");
        let body = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        outcome.pooled.write(dir.join("pooled_report"))?;
    }
    Ok(outcome)
}
