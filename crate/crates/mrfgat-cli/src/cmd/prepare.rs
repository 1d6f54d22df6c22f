//! `mrfgat prepare` — raw ModelNet directory to binary cache.

use crate::{Failure, PrepareArgs};
use mrfgat_core::dataset::{build_cache_from_manifest, scan_modelnet, write_cache, Split};
use std::fs;

pub fn run(args: &PrepareArgs, seed: u64) -> Result<(), Failure> {
    if !args.raw.is_dir() {
        return Err(Failure::Usage(format!(
            "--raw {:?} is not a directory",
            args.raw
        )));
    }
    let manifest = scan_modelnet(&args.raw)?;
    let (cache, summary) = build_cache_from_manifest(&manifest, args.points, seed)?;

    let before = fs::read(&args.out).ok();
    write_cache(&args.out, &cache)?;
    let unchanged = before.as_deref() == Some(&fs::read(&args.out)?[..]);

    let width = summary
        .per_class
        .iter()
        .map(|(name, _, _)| name.len())
        .max()
        .unwrap_or(0);
    for (name, train, test) in &summary.per_class {
        println!("{name:<width$}  train={train:<5} test={test}");
    }
    println!(
        "train={} test={}",
        summary.total(Split::Train),
        summary.total(Split::Test)
    );
    println!(
        "points={} classes={} seed={} -> {}",
        args.points,
        cache.num_classes(),
        seed,
        args.out.display()
    );
    if summary.dropped_faces > 0 {
        println!("dropped {} degenerate faces", summary.dropped_faces);
    }
    if unchanged {
        println!("cache unchanged");
    }

    if summary.skipped.is_empty() {
        Ok(())
    } else {
        for (path, reason) in &summary.skipped {
            eprintln!("skipped {}: {reason}", path.display());
        }
        Err(Failure::Runtime(format!(
            "{} files skipped",
            summary.skipped.len()
        )))
    }
}
