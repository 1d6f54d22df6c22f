//! `mrfgat inspect` — describe a cache or checkpoint file.

use crate::{Failure, InspectArgs};
use mrfgat_core::dataset::{read_cache, Split};
use mrfgat_core::model::param_count;
use mrfgat_core::train::load_checkpoint;
use std::path::Path;

fn inspect_cache(path: &Path) -> Result<(), Failure> {
    let cache = read_cache(path)?;
    println!("cache {}", path.display());
    println!(
        "points_per_cloud={} classes={} train={} test={}",
        cache.points_per_cloud,
        cache.num_classes(),
        cache.train.len(),
        cache.test.len()
    );
    let width = cache
        .class_names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0);
    for (i, name) in cache.class_names.iter().enumerate() {
        let count = |split| {
            cache
                .labels(split)
                .iter()
                .filter(|&&l| l as usize == i)
                .count()
        };
        println!(
            "{name:<width$}  train={:<5} test={}",
            count(Split::Train),
            count(Split::Test)
        );
    }
    Ok(())
}

fn inspect_checkpoint(path: &Path) -> Result<(), Failure> {
    let ckpt = load_checkpoint(path)?;
    let cfg = &ckpt.model_config;
    println!("checkpoint {}", path.display());
    println!(
        "epoch={} seed={} adam_steps={}",
        ckpt.epoch, ckpt.seed, ckpt.adam.t
    );
    if ckpt.best_oa >= 0.0 {
        println!("best_test_OA={:.4} at epoch {}", ckpt.best_oa, ckpt.best_epoch);
    } else {
        println!("best_test_OA=<never evaluated>");
    }
    println!(
        "scales={:?} channels={:?} mlps={:?} global={} head={:?} classes={}",
        cfg.neighbor_counts,
        cfg.scale_channels,
        cfg.mlp_widths,
        cfg.global_width,
        cfg.head_widths,
        cfg.num_classes
    );
    println!(
        "param_count={} tensors={} bn_layers={}",
        param_count(cfg),
        ckpt.net.store.len(),
        ckpt.net.stats.len()
    );
    Ok(())
}

pub fn run(args: &InspectArgs) -> Result<(), Failure> {
    match (&args.cache, &args.checkpoint) {
        (Some(path), None) => inspect_cache(path),
        (None, Some(path)) => inspect_checkpoint(path),
        _ => Err(Failure::Usage(
            "pass exactly one of --cache or --checkpoint".into(),
        )),
    }
}
