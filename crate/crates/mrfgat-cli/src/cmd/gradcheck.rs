//! `mrfgat gradcheck` — end-to-end finite-difference audit.
//!
//! Runs the whole-network gradient check on the reduced two-scale
//! configuration and prints one line per parameter block. The process
//! exits 0 only if every block's worst relative error is under the
//! tolerance.

use crate::{Failure, GradcheckArgs};
use mrfgat_core::autodiff::{format_block_reports, overall_max_rel_err};
use mrfgat_core::model::{model_grad_check, MrfgatConfig};
use std::time::Instant;

pub fn run(args: &GradcheckArgs, seed: u64) -> Result<(), Failure> {
    let config = MrfgatConfig::reduced_test();
    println!(
        "gradient check: reduced config, {} points, batch {}, eps {:.1e}, seed {seed}",
        args.points, args.batch, args.eps
    );
    let timer = Instant::now();
    let blocks = model_grad_check(&config, args.points, args.batch, seed, args.eps)?;
    let elapsed = timer.elapsed().as_secs_f64();

    print!("{}", format_block_reports(&blocks));
    let worst = overall_max_rel_err(&blocks);
    println!("worst relative error {worst:.3e} over {} blocks ({elapsed:.1}s)", blocks.len());

    if worst < args.tolerance {
        println!("PASS (tolerance {:.1e})", args.tolerance);
        Ok(())
    } else {
        println!("FAIL (tolerance {:.1e})", args.tolerance);
        let offenders: Vec<&str> = blocks
            .iter()
            .filter(|b| b.report.max_rel_err >= args.tolerance)
            .map(|b| b.name.as_str())
            .collect();
        Err(Failure::Runtime(format!(
            "gradient check failed in: {}",
            offenders.join(", ")
        )))
    }
}
