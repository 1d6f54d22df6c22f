//! `mrfgat bench-knn` — time the two kNN backends and verify agreement.
//!
//! Correctness beats timing: every repeat compares the full neighbor graphs
//! (indices and edge vectors) and any disagreement is a hard failure.

use crate::{BenchKnnArgs, Failure};
use mrfgat_core::geometry::{knn_graph_bruteforce, knn_graph_indexed};
use mrfgat_core::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ]
        })
        .collect();
    PointCloud::new(pts, None).expect("random cloud is valid")
}

fn mean_ms(times: &[f64]) -> f64 {
    times.iter().sum::<f64>() / times.len() as f64
}

fn p95_ms(times: &[f64]) -> f64 {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

pub fn run(args: &BenchKnnArgs, seed: u64) -> Result<(), Failure> {
    if args.k == 0 || args.n < args.k {
        return Err(Failure::Usage(format!(
            "need 1 <= k <= n, got n={} k={}",
            args.n, args.k
        )));
    }
    if args.repeat == 0 {
        return Err(Failure::Usage("--repeat must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut brute_times = Vec::with_capacity(args.repeat);
    let mut indexed_times = Vec::with_capacity(args.repeat);
    for repeat in 0..args.repeat {
        let cloud = random_cloud(args.n, &mut rng);

        let timer = Instant::now();
        let brute = knn_graph_bruteforce(&cloud, args.k)?;
        brute_times.push(timer.elapsed().as_secs_f64() * 1e3);

        let timer = Instant::now();
        let indexed = knn_graph_indexed(&cloud, args.k)?;
        indexed_times.push(timer.elapsed().as_secs_f64() * 1e3);

        if brute != indexed {
            return Err(Failure::Runtime(format!(
                "backends disagree on repeat {repeat} (n={} k={} seed={seed})",
                args.n, args.k
            )));
        }
    }

    println!(
        "kNN n={} k={} over {} clouds (seed {seed})",
        args.n, args.k, args.repeat
    );
    println!("backend   mean_ms   p95_ms");
    println!(
        "brute     {:>7.3}   {:>6.3}",
        mean_ms(&brute_times),
        p95_ms(&brute_times)
    );
    println!(
        "indexed   {:>7.3}   {:>6.3}",
        mean_ms(&indexed_times),
        p95_ms(&indexed_times)
    );
    println!("backends agree on all {} repeats", args.repeat);
    Ok(())
}
