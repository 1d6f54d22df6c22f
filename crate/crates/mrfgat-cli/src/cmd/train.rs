//! `mrfgat train` — optimize a network on a prepared cache.

use crate::{config, Failure, TrainArgs};
use mrfgat_core::dataset::read_cache;
use mrfgat_core::train::{
    load_checkpoint, resume_with_progress, train_with_progress, EpochLog, TrainRun,
};

fn print_epoch(log: &EpochLog, json: bool) {
    if json {
        println!(
            "{}",
            serde_json::to_string(log).expect("epoch log serializes")
        );
        return;
    }
    let mut line = format!(
        "epoch {:>4}  loss {:.4}  train_acc {:.4}  lr {:.2e}",
        log.epoch, log.loss, log.train_acc, log.lr
    );
    if let (Some(oa), Some(ma)) = (log.test_oa, log.test_ma) {
        line.push_str(&format!("  test_OA {oa:.4}  test_MA {ma:.4}"));
    }
    line.push_str(&format!("  ({:.1}s)", log.wall_time));
    println!("{line}");
}

pub fn run(args: &TrainArgs, config_arg: Option<&str>, seed: Option<u64>) -> Result<(), Failure> {
    let mut exp = config::resolve(config_arg)?;
    if let Some(s) = seed {
        exp.train.seed = s;
    }
    if let Some(e) = args.epochs {
        exp.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        exp.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        exp.train.learning_rate = lr;
    }
    if let Some(f) = args.subset {
        exp.train.subset_fraction = Some(f);
    }
    if let Some(e) = args.eval_every {
        exp.train.eval_every = e;
    }
    exp.train.log_path = args.log.clone();
    exp.train.checkpoint_dir = args.checkpoint_dir.clone();

    let cache = read_cache(&args.cache)?;
    if cache.points_per_cloud as usize != exp.points {
        eprintln!(
            "note: cache holds {}-point clouds, config expects {}",
            cache.points_per_cloud, exp.points
        );
    }

    let json = args.json;
    let run: TrainRun = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            println!(
                "resuming from epoch {} (seed {})",
                ckpt.epoch, ckpt.seed
            );
            resume_with_progress(ckpt, &cache, &exp.train, |l| print_epoch(l, json))?
        }
        None => train_with_progress(&cache, &exp.model, &exp.train, |l| print_epoch(l, json))?,
    };

    if !json {
        println!(
            "done: {} epochs this run, {} train samples per epoch",
            run.logs.len(),
            run.train_samples
        );
        if run.checkpoint.best_oa >= 0.0 {
            println!(
                "best test_OA {:.4} at epoch {}",
                run.checkpoint.best_oa, run.checkpoint.best_epoch
            );
        }
        if let Some(dir) = &exp.train.checkpoint_dir {
            println!("checkpoints in {}", dir.display());
        }
    }
    Ok(())
}
