//! Synthetic two-class benchmark for the overfit smoke test.
//!
//! The shapes are chosen so the classes are genuinely different (a flat
//! disk versus a circular ring) yet small enough that a reduced network
//! must simply memorize them — a correct implementation reaches near-perfect
//! train accuracy quickly, a broken gradient or optimizer does not.

use crate::dataset::Cache;
use crate::geometry::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disk(points: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let pts = (0..points)
        .map(|_| {
            let r = rng.gen::<f64>().sqrt() * 0.9;
            let t = rng.gen::<f64>() * std::f64::consts::TAU;
            [r * t.cos(), r * t.sin(), rng.gen::<f64>() * 0.04 - 0.02]
        })
        .collect();
    PointCloud::new(pts, Some(0)).expect("fixture cloud is valid")
}

fn ring(points: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let pts = (0..points)
        .map(|_| {
            let r = 0.8 + rng.gen::<f64>() * 0.2;
            let t = rng.gen::<f64>() * std::f64::consts::TAU;
            [r * t.cos(), r * t.sin(), rng.gen::<f64>() * 0.04 - 0.02]
        })
        .collect();
    PointCloud::new(pts, Some(1)).expect("fixture cloud is valid")
}

/// Builds the two-class fixture: `train_per_class`/`test_per_class` clouds
/// of each class with `points` points, deterministic in `seed`.
pub fn overfit_fixture(
    train_per_class: usize,
    test_per_class: usize,
    points: usize,
    seed: u64,
) -> Cache {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(2 * train_per_class);
    let mut test = Vec::with_capacity(2 * test_per_class);
    for _ in 0..train_per_class {
        train.push(disk(points, &mut rng));
        train.push(ring(points, &mut rng));
    }
    for _ in 0..test_per_class {
        test.push(disk(points, &mut rng));
        test.push(ring(points, &mut rng));
    }
    Cache {
        points_per_cloud: points as u32,
        class_names: vec!["disk".into(), "ring".into()],
        train,
        test,
    }
}
