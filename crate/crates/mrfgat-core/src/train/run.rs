//! The optimization loop.
//!
//! Per epoch: deterministically shuffled (optionally augmented) batches →
//! train-mode forward → softmax cross-entropy → backward → Adam step. The
//! logged loss and train accuracy come from the same train-mode forward,
//! measured before each step. The test split is evaluated at the configured
//! interval and on the final epoch; best-OA and last checkpoints are written
//! when a checkpoint directory is set.

use crate::autodiff::{AdamConfig, AdamState};
use crate::dataset::{batch_iter_slice, derive_seed, stratified_indices, Cache, Split};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::{forward_batch_train, param_init, MrfgatConfig, NetworkParams};
use crate::train::metrics::argmax_row;
use crate::train::{evaluate, save_checkpoint, Checkpoint, EpochLog, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::Write;
use std::time::Instant;

/// Keeps the dropout stream disjoint from the shuffle/augment streams that
/// are derived from the same base seed.
const DROPOUT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// A finished (or aborted-at-epoch-boundary) training run.
#[derive(Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    /// One entry per epoch this call executed (empty if already done).
    pub logs: Vec<EpochLog>,
    /// Train samples per epoch after any stratified subsetting.
    pub train_samples: usize,
}

fn effective_lr(cfg: &TrainConfig, epoch: u32) -> f64 {
    match &cfg.lr_decay {
        Some(d) => cfg.learning_rate * d.factor.powi(((epoch - 1) / d.every) as i32),
        None => cfg.learning_rate,
    }
}

fn non_finite_report(epoch: u32, batch: usize, loss: f64, net: &NetworkParams) -> Error {
    let mut msg =
        format!("loss became {loss} at epoch {epoch}, batch {batch}; parameter l2 norms:");
    for (_, p) in net.store.iter() {
        let norm = p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        msg.push_str(&format!(" {}={:.3e}", p.name, norm));
    }
    Error::NonFinite(msg)
}

/// One pass over the shuffled train samples; returns (mean loss, accuracy),
/// both measured on train-mode forwards before the step that follows them.
fn run_one_epoch(
    ckpt: &mut Checkpoint,
    samples: &[PointCloud],
    cfg: &TrainConfig,
    epoch: u32,
    lr: f64,
) -> Result<(f64, f64)> {
    let Checkpoint {
        model_config,
        net,
        adam,
        seed,
        ..
    } = ckpt;
    let adam_cfg = AdamConfig::default();
    let batches = batch_iter_slice(
        samples,
        cfg.batch_size,
        Some(*seed),
        epoch as u64,
        cfg.augment.as_ref(),
    )?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for (bi, batch) in batches.enumerate() {
        let refs: Vec<&PointCloud> = batch.clouds.iter().collect();
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(*seed ^ DROPOUT_STREAM, epoch as u64, bi as u64));
        let mut bf = forward_batch_train(&refs, net, model_config, &mut dropout_rng)?;
        let loss = bf.tape.cross_entropy_with_logits(bf.logits, &batch.labels)?;
        let loss_val = bf.tape.value(loss).data()[0];
        if !loss_val.is_finite() {
            return Err(non_finite_report(epoch, bi, loss_val, net));
        }
        correct += bf
            .tape
            .value(bf.logits)
            .data()
            .chunks(model_config.num_classes)
            .zip(&batch.labels)
            .filter(|(row, &label)| argmax_row(row) == label)
            .count();
        bf.tape.backward(loss)?;
        bf.tape.accumulate_param_grads(&mut net.store);
        adam.step(&mut net.store, &adam_cfg, lr);
        loss_sum += loss_val * batch.len() as f64;
        seen += batch.len();
    }
    Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
}

fn run_epochs(
    mut ckpt: Checkpoint,
    cache: &Cache,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainRun> {
    cfg.validate()?;
    if cache.num_classes() != ckpt.model_config.num_classes {
        return Err(Error::Invalid(format!(
            "cache has {} classes, model config expects {}",
            cache.num_classes(),
            ckpt.model_config.num_classes
        )));
    }
    let train_all = cache.split(Split::Train);
    let subset: Option<Vec<PointCloud>> = match cfg.subset_fraction {
        Some(f) if f < 1.0 => {
            let labels = cache.labels(Split::Train);
            let picked = stratified_indices(&labels, cache.num_classes(), f, ckpt.seed)?;
            Some(picked.iter().map(|&i| train_all[i].clone()).collect())
        }
        _ => None,
    };
    let samples: &[PointCloud] = subset.as_deref().unwrap_or(train_all);
    let test = cache.split(Split::Test);

    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut log_file = match &cfg.log_path {
        Some(p) => Some(fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };

    let mut logs = Vec::new();
    for epoch in ckpt.epoch + 1..=cfg.epochs {
        let timer = Instant::now();
        let lr = effective_lr(cfg, epoch);
        let (loss, train_acc) = run_one_epoch(&mut ckpt, samples, cfg, epoch, lr)?;
        ckpt.epoch = epoch;

        let mut test_oa = None;
        let mut test_ma = None;
        if !test.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            let m = evaluate(test, &ckpt.net, &ckpt.model_config, cfg.eval_chunk)?;
            test_oa = Some(m.overall_accuracy);
            test_ma = Some(m.mean_class_accuracy);
            if m.overall_accuracy > ckpt.best_oa {
                ckpt.best_oa = m.overall_accuracy;
                ckpt.best_epoch = epoch;
                if let Some(dir) = &cfg.checkpoint_dir {
                    save_checkpoint(&ckpt, &dir.join("best.ckpt"))?;
                }
            }
        }

        let entry = EpochLog {
            epoch,
            loss,
            train_acc,
            test_oa,
            test_ma,
            lr,
            wall_time: timer.elapsed().as_secs_f64(),
        };
        if let Some(f) = &mut log_file {
            let line = serde_json::to_string(&entry)
                .map_err(|e| Error::Invalid(format!("log serialization failed: {e}")))?;
            writeln!(f, "{line}")?;
        }
        on_epoch(&entry);
        logs.push(entry);

        if let Some(dir) = &cfg.checkpoint_dir {
            save_checkpoint(&ckpt, &dir.join("last.ckpt"))?;
        }
    }

    Ok(TrainRun {
        checkpoint: ckpt,
        logs,
        train_samples: samples.len(),
    })
}

/// Trains a freshly initialized network on the cache's train split.
pub fn train(cache: &Cache, model_cfg: &MrfgatConfig, cfg: &TrainConfig) -> Result<TrainRun> {
    train_with_progress(cache, model_cfg, cfg, |_| {})
}

/// [`train`] with a callback invoked after every logged epoch.
pub fn train_with_progress(
    cache: &Cache,
    model_cfg: &MrfgatConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainRun> {
    model_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = param_init(model_cfg, &mut rng)?;
    let adam = AdamState::new(&net.store);
    let ckpt = Checkpoint {
        model_config: model_cfg.clone(),
        net,
        adam,
        epoch: 0,
        seed: cfg.seed,
        best_oa: -1.0,
        best_epoch: 0,
    };
    run_epochs(ckpt, cache, cfg, &mut on_epoch)
}

/// Continues a checkpointed run up to `cfg.epochs` total epochs.
///
/// All random streams derive from the checkpoint's own seed (`cfg.seed` is
/// ignored here), so the continued trajectory is identical to the one an
/// uninterrupted run would have produced. A checkpoint already at or past
/// `cfg.epochs` returns unchanged with an empty log.
pub fn train_resume(ckpt: Checkpoint, cache: &Cache, cfg: &TrainConfig) -> Result<TrainRun> {
    resume_with_progress(ckpt, cache, cfg, |_| {})
}

/// [`train_resume`] with a callback invoked after every logged epoch.
pub fn resume_with_progress(
    ckpt: Checkpoint,
    cache: &Cache,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainRun> {
    run_epochs(ckpt, cache, cfg, &mut on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{load_checkpoint, overfit_fixture, LrDecay};
    use std::path::Path;

    fn fixture_config() -> MrfgatConfig {
        MrfgatConfig {
            num_classes: 2,
            ..MrfgatConfig::reduced_test()
        }
    }

    fn quick_train_config(epochs: u32, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay: Some(LrDecay {
                factor: 0.7,
                every: 2,
            }),
            seed,
            eval_every: 2,
            ..TrainConfig::default()
        }
    }

    fn checkpoint_bytes(ckpt: &Checkpoint, dir: &Path, name: &str) -> Vec<u8> {
        let p = dir.join(name);
        save_checkpoint(ckpt, &p).unwrap();
        fs::read(&p).unwrap()
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let cache = overfit_fixture(4, 2, 16, 7);
        let cfg = quick_train_config(3, 5);
        let a = train(&cache, &fixture_config(), &cfg).unwrap();
        let b = train(&cache, &fixture_config(), &cfg).unwrap();
        assert_eq!(a.logs.len(), 3);
        assert!(a
            .logs
            .iter()
            .zip(&b.logs)
            .all(|(x, y)| x.same_trajectory(y)));
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            checkpoint_bytes(&a.checkpoint, dir.path(), "a.ckpt"),
            checkpoint_bytes(&b.checkpoint, dir.path(), "b.ckpt")
        );
        // Evaluation ran on epochs 2 (interval) and 3 (final), not on 1.
        assert!(a.logs[0].test_oa.is_none());
        assert!(a.logs[1].test_oa.is_some());
        assert!(a.logs[2].test_oa.is_some());
        // The decay stepped the learning rate down at epoch 3.
        assert_eq!(a.logs[0].lr, 1e-3);
        assert_eq!(a.logs[2].lr, 0.7e-3);
    }

    #[test]
    fn loss_descends_on_the_overfit_fixture() {
        let cache = overfit_fixture(8, 0, 16, 11);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            lr_decay: None,
            seed: 1,
            augment: None,
            ..TrainConfig::default()
        };
        let run = train(&cache, &fixture_config(), &cfg).unwrap();
        // One batch per epoch, loss measured before the step: the epoch-1
        // entry is the initialization loss, epoch 2 follows one Adam step.
        assert_eq!(run.train_samples, 16);
        assert!(
            run.logs[1].loss < run.logs[0].loss,
            "no descent: {} -> {}",
            run.logs[0].loss,
            run.logs[1].loss
        );
    }

    #[test]
    fn overfit_fixture_is_memorized() {
        let cache = overfit_fixture(8, 0, 16, 13);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            lr_decay: None,
            seed: 2,
            augment: None,
            ..TrainConfig::default()
        };
        let run = train(&cache, &fixture_config(), &cfg).unwrap();
        let best = run
            .logs
            .iter()
            .map(|l| l.train_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.95, "train accuracy only reached {best}");
    }

    #[test]
    fn resume_continues_the_exact_trajectory() {
        let cache = overfit_fixture(4, 2, 16, 3);
        let dir_full = tempfile::tempdir().unwrap();
        let dir_short = tempfile::tempdir().unwrap();

        let mut cfg_full = quick_train_config(6, 9);
        cfg_full.checkpoint_dir = Some(dir_full.path().to_path_buf());
        let full = train(&cache, &fixture_config(), &cfg_full).unwrap();

        let mut cfg_short = quick_train_config(3, 9);
        cfg_short.checkpoint_dir = Some(dir_short.path().to_path_buf());
        train(&cache, &fixture_config(), &cfg_short).unwrap();

        let loaded = load_checkpoint(&dir_short.path().join("last.ckpt")).unwrap();
        assert_eq!(loaded.epoch, 3);
        let mut cfg_resume = quick_train_config(6, 9);
        cfg_resume.checkpoint_dir = Some(dir_short.path().to_path_buf());
        let resumed = train_resume(loaded, &cache, &cfg_resume).unwrap();

        assert_eq!(resumed.logs.len(), 3);
        for (r, f) in resumed.logs.iter().zip(&full.logs[3..]) {
            assert!(
                r.same_trajectory(f),
                "epoch {} diverged: {r:?} vs {f:?}",
                f.epoch
            );
        }
        assert_eq!(
            fs::read(dir_full.path().join("last.ckpt")).unwrap(),
            fs::read(dir_short.path().join("last.ckpt")).unwrap()
        );

        // Resuming a finished run is a no-op.
        let done = load_checkpoint(&dir_full.path().join("last.ckpt")).unwrap();
        let idle = train_resume(done, &cache, &quick_train_config(6, 9)).unwrap();
        assert!(idle.logs.is_empty());
        assert_eq!(idle.checkpoint.epoch, 6);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let cache = overfit_fixture(4, 0, 16, 21);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = train(&cache, &fixture_config(), &cfg).unwrap();
        let mut ckpt = run.checkpoint;
        let (_, poisoned) = ckpt.net.store.iter_mut().next().unwrap();
        poisoned.value.data_mut()[0] = f64::NAN;
        let err = train_resume(ckpt, &cache, &TrainConfig { epochs: 2, ..cfg }).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::NonFinite(_)), "{msg}");
        assert!(msg.contains("epoch 2, batch 0"), "{msg}");
        assert!(msg.contains("scale0.edge.w="), "{msg}");
    }

    #[test]
    fn log_file_holds_one_json_object_per_epoch() {
        let cache = overfit_fixture(4, 1, 16, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let mut cfg = quick_train_config(2, 6);
        cfg.log_path = Some(path.clone());
        let run = train(&cache, &fixture_config(), &cfg).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let parsed: Vec<EpochLog> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed.len(), 2);
        assert!(parsed
            .iter()
            .zip(&run.logs)
            .all(|(p, l)| p.same_trajectory(l)));
        assert!(text.lines().next().unwrap().contains("\"test_OA\":null"));
    }

    #[test]
    fn stratified_subset_shrinks_the_epoch() {
        let cache = overfit_fixture(8, 0, 16, 19);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 3,
            subset_fraction: Some(0.5),
            ..TrainConfig::default()
        };
        let run = train(&cache, &fixture_config(), &cfg).unwrap();
        assert_eq!(run.train_samples, 8);

        let full = train(
            &cache,
            &fixture_config(),
            &TrainConfig {
                subset_fraction: None,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(full.train_samples, 16);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let cache = overfit_fixture(2, 0, 16, 23);
        let err = train(&cache, &MrfgatConfig::reduced_test(), &quick_train_config(1, 0)).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)), "{err}");
    }
}
