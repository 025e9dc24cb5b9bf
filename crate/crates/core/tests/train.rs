mod support;

use support::*;
use unionnet::arch::{NetConfig, UnionNet};
use unionnet::data::{make_fold_plan, stratified_split, SplitSpec, FOLD_COUNT};
use unionnet::tensor::{softmax_cross_entropy, Shape};
use unionnet::train::*;
use unionnet::Error;

fn toy_split(data: &unionnet::data::Dataset, val: usize, seed: u64) -> SplitSpec {
    let all: Vec<usize> = (0..data.len()).collect();
    stratified_split(data, &all, val, 0, seed).unwrap()
}

fn quick_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        ..TrainConfig::image_folder()
    }
}

fn net(width: usize, classes: usize, seed: u64) -> UnionNet {
    UnionNet::new(NetConfig::new(width, classes), seed).unwrap()
}

fn set_momentum(m: &mut UnionNet, v: f32) {
    for b in 0..3 {
        for br in &mut m.block_mut(b).branches {
            for u in &mut br.units {
                u.bn.momentum = v;
            }
        }
    }
    m.final_unit_mut().bn.momentum = v;
}

#[test]
fn zero_epochs_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(8, 2, 8, 1);
    let split = toy_split(&data, 2, 0);
    let mut m = net(2, 2, 3);
    let initial = m.clone();
    let out = train(
        &mut m,
        &data,
        &split,
        &quick_cfg(0, 0),
        Some(dir.path()),
        &mut |_| {},
    )
    .unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, 0);
    let csv = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(csv, format!("{HISTORY_HEADER}\n"));
    let best = Checkpoint::load(dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.net, initial);
    assert_eq!(best.epoch, 0);
}

#[test]
fn same_seed_gives_identical_history_files() {
    let data = blobs(32, 2, 8, 2);
    let split = toy_split(&data, 8, 5);
    let run = |dir: &std::path::Path| {
        let mut m = net(4, 2, 11);
        train(
            &mut m,
            &data,
            &split,
            &quick_cfg(3, 7),
            Some(dir),
            &mut |_| {},
        )
        .unwrap();
        std::fs::read(dir.join(HISTORY_FILE)).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ha, hb) = (run(a.path()), run(b.path()));
    assert_eq!(ha, hb);
    assert_eq!(String::from_utf8(ha).unwrap().lines().count(), 4);
    assert_eq!(
        std::fs::read(a.path().join(LAST_CHECKPOINT)).unwrap(),
        std::fs::read(b.path().join(LAST_CHECKPOINT)).unwrap()
    );
}

#[test]
fn separable_blobs_reach_perfect_validation_accuracy() {
    let data = blobs(40, 2, 8, 3);
    let split = toy_split(&data, 10, 1);
    let mut m = net(4, 2, 4);
    let out = train(&mut m, &data, &split, &quick_cfg(30, 2), None, &mut |_| {}).unwrap();
    let best = out.history.iter().map(|r| r.val_acc).fold(0.0, f64::max);
    assert_eq!(best, 1.0, "{:#?}", out.history.last());
    assert_eq!(out.best_val_acc, 1.0);
    for r in &out.history {
        assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
        assert!(r.lr > 0.0);
    }
}

#[test]
fn resume_reproduces_remaining_epochs() {
    let data = blobs(24, 3, 8, 4);
    let split = toy_split(&data, 6, 2);
    let cfg = TrainConfig {
        augment: unionnet::data::AugmentPolicy::HorizontalFlip,
        plateau: unionnet::optim::PlateauConfig {
            patience: 1,
            ..Default::default()
        },
        ..quick_cfg(5, 9)
    };
    let full_dir = tempfile::tempdir().unwrap();
    let mut m = net(3, 3, 5);
    let full = train(
        &mut m,
        &data,
        &split,
        &cfg,
        Some(full_dir.path()),
        &mut |_| {},
    )
    .unwrap();

    let part_dir = tempfile::tempdir().unwrap();
    let mut m2 = net(3, 3, 5);
    let cut = TrainConfig { epochs: 2, ..cfg };
    train(
        &mut m2,
        &data,
        &split,
        &cut,
        Some(part_dir.path()),
        &mut |_| {},
    )
    .unwrap();
    let ckpt = Checkpoint::load(part_dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ckpt.epoch, 2);
    let (resumed_net, resumed) =
        resume(ckpt, &data, &split, 5, Some(part_dir.path()), &mut |_| {}).unwrap();

    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed_net, m);
    assert_eq!(resumed.best_epoch, full.best_epoch);
    assert_eq!(
        std::fs::read(full_dir.path().join(HISTORY_FILE)).unwrap(),
        std::fs::read(part_dir.path().join(HISTORY_FILE)).unwrap()
    );
    assert_eq!(
        std::fs::read(full_dir.path().join(BEST_CHECKPOINT)).unwrap(),
        std::fs::read(part_dir.path().join(BEST_CHECKPOINT)).unwrap()
    );
}

#[test]
fn tied_validation_accuracy_keeps_earlier_epoch() {
    let data = blobs(8, 2, 8, 5);
    let split = toy_split(&data, 4, 3);
    let mut cfg = quick_cfg(4, 0);
    // a vanishing step size and frozen running statistics keep predictions,
    // and so accuracy, fixed
    cfg.optimizer.lr = 1e-30;
    let mut m = net(2, 2, 6);
    set_momentum(&mut m, 1.0);
    let out = train(&mut m, &data, &split, &cfg, None, &mut |_| {}).unwrap();
    let accs: Vec<f64> = out.history.iter().map(|r| r.val_acc).collect();
    assert!(accs.windows(2).all(|w| w[0] == w[1]), "{accs:?}");
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn non_finite_loss_aborts_with_coordinates() {
    let data = blobs(8, 2, 8, 6);
    let split = toy_split(&data, 2, 0);
    let mut m = net(2, 2, 7);
    m.classifier_mut().weight[0] = f32::NAN;
    let err = train(&mut m, &data, &split, &quick_cfg(2, 0), None, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(err.to_string().contains("epoch 1 batch 0"), "{err}");
}

#[test]
fn evaluation_counts_match_labels() {
    let data = blobs(10, 3, 8, 7);
    let m = net(2, 3, 8);
    let means = vec![0.5; 3];
    let idx: Vec<usize> = (0..data.len()).collect();
    let (rep, preds) = evaluate(&m, &data, &idx, &means, 7).unwrap();
    assert_eq!(preds.len(), 30);
    let rows: Vec<usize> = rep.confusion.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(rows, data.class_counts(&idx));
    let trace: usize = (0..3).map(|c| rep.confusion[c][c]).sum();
    assert_eq!(rep.accuracy, trace as f64 / 30.0);
    for c in &rep.classes {
        assert!((c.f1 - f1_score(c.precision, c.recall)).abs() <= 1e-6);
    }
    assert!(matches!(
        evaluate(&m, &data, &[], &means, 7),
        Err(Error::Validation(_))
    ));
    // batching must not change predictions
    let (rep1, preds1) = evaluate(&m, &data, &idx, &means, 1).unwrap();
    assert_eq!(preds1, preds);
    assert_eq!(rep1.confusion, rep.confusion);
}

#[test]
fn training_and_inference_agree_with_frozen_batch_statistics() {
    let mut r = rng(9);
    let mut m = net(4, 3, 10);
    let (n, side) = (4, 8);
    let x = random_tensor(&mut r, Shape::new(n, 3, side, side));
    let labels = [0, 2, 1, 2];

    set_momentum(&mut m, 0.0);
    let (logits, _) = m.forward(&x, true).unwrap();
    let train_loss = softmax_cross_entropy(&logits, &labels).unwrap().loss;

    // running variance is unbiased; normalization used the biased one
    let debias = |count: usize| (count - 1) as f32 / count as f32;
    for b in 0..3 {
        let count = if b == 0 {
            n * side * side
        } else {
            n * side * side / 4
        };
        for br in &mut m.block_mut(b).branches {
            for u in &mut br.units {
                u.bn.running_var
                    .iter_mut()
                    .for_each(|v| *v *= debias(count));
            }
        }
    }
    let count = n * side * side / 4;
    m.final_unit_mut()
        .bn
        .running_var
        .iter_mut()
        .for_each(|v| *v *= debias(count));

    let infer_loss = softmax_cross_entropy(&m.predict(&x).unwrap(), &labels)
        .unwrap()
        .loss;
    assert!(
        (train_loss - infer_loss).abs() <= 1e-5,
        "{train_loss} vs {infer_loss}"
    );
}

#[test]
fn kfold_tests_every_sample_once_and_is_deterministic() {
    let data = blobs(80, 2, 4, 8);
    let plan = make_fold_plan(&data, 3).unwrap();
    let cfg = KFoldConfig {
        train: TrainConfig {
            epochs: 1,
            batch_size: 32,
            seed: 100,
            ..TrainConfig::image_folder()
        },
        width: 2,
        jobs: 1,
    };
    let dir = tempfile::tempdir().unwrap();
    let a = run_kfold(&data, &plan, &cfg, Some(dir.path()), &|_, _| {}).unwrap();
    assert_eq!(a.folds.len(), FOLD_COUNT);
    let mut tested = vec![0; data.len()];
    for (i, f) in a.folds.iter().enumerate() {
        assert_eq!((f.fold, f.test_decile, f.val_decile), (i, i, (i + 1) % 10));
        assert_eq!(f.seed, 100 + i as u64);
        assert_eq!(f.predictions.len(), 16);
        f.predictions.iter().for_each(|p| tested[p.index] += 1);
        assert!(dir
            .path()
            .join(format!("fold_{i}/predictions.csv"))
            .exists());
    }
    assert!(tested.iter().all(|&c| c == 1));
    let mean = a.folds.iter().map(|f| f.report.accuracy).sum::<f64>() / 10.0;
    assert_eq!(a.mean_accuracy, mean);
    assert_eq!(a.pooled.total, data.len());

    let parallel = KFoldConfig { jobs: 3, ..cfg };
    let b = run_kfold(&data, &plan, &parallel, None, &|_, _| {}).unwrap();
    assert_eq!(a.render_summary(), b.render_summary());
    for (x, y) in a.folds.iter().zip(&b.folds) {
        assert_eq!(x.history, y.history);
        assert_eq!(x.predictions, y.predictions);
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(summary, a.render_summary());
    assert!(summary.contains("mean accuracy"));
}

#[test]
fn kfold_errors_name_the_fold() {
    let data = blobs(80, 2, 4, 9);
    let plan = make_fold_plan(&data, 0).unwrap();
    let cfg = KFoldConfig {
        train: quick_cfg(1, 0),
        width: 999,
        jobs: 1,
    };
    let err = run_kfold(&data, &plan, &cfg, None, &|_, _| {}).unwrap_err();
    assert!(matches!(err, Error::InFold { fold: 0, .. }), "{err}");
}
