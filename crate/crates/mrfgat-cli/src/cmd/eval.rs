//! `mrfgat eval` — score a checkpoint on a cache split.

use crate::{EvalArgs, Failure};
use mrfgat_core::dataset::{read_cache, Split};
use mrfgat_core::train::{evaluate, load_checkpoint};

pub fn run(args: &EvalArgs) -> Result<(), Failure> {
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Failure::Usage(format!(
                "--split {other:?} (expected train or test)"
            )))
        }
    };
    let cache = read_cache(&args.cache)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if cache.num_classes() != ckpt.model_config.num_classes {
        return Err(Failure::Runtime(format!(
            "cache has {} classes, checkpoint expects {}",
            cache.num_classes(),
            ckpt.model_config.num_classes
        )));
    }

    let metrics = evaluate(cache.split(split), &ckpt.net, &ckpt.model_config, args.chunk)?;

    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&metrics).expect("metrics serialize")
        );
        return Ok(());
    }

    println!(
        "OA={:.4} MA={:.4}",
        metrics.overall_accuracy, metrics.mean_class_accuracy
    );
    let width = cache
        .class_names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0);
    for (i, name) in cache.class_names.iter().enumerate() {
        let support: u64 = metrics.confusion[i].iter().sum();
        match metrics.per_class[i] {
            Some(acc) => println!("{name:<width$}  acc={acc:.4}  support={support}"),
            None => println!("{name:<width$}  (no samples in split)"),
        }
    }
    if !metrics.excluded_classes.is_empty() {
        println!(
            "{} class(es) without support excluded from MA",
            metrics.excluded_classes.len()
        );
    }
    Ok(())
}
