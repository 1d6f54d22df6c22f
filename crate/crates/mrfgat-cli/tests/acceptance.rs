//! Acceptance gate: one test per criterion, each printing a PASS line
//! (visible with `--nocapture`).
//!
//! Run with:
//!
//! ```text
//! cargo test -p mrfgat-cli --test acceptance -- --nocapture
//! ```
//!
//! Criteria 7 and 10 need the real ModelNet10 meshes and multi-hour CPU
//! budgets, so they are `#[ignore]`d by default; set `MRFGAT_MODELNET10_DIR`
//! to the raw dataset root and add `--ignored` to run them. They fail loudly
//! rather than skip silently when the dataset is missing.

use mrfgat_core::autodiff::{ParamStore, Tensor};
use mrfgat_core::dataset::{build_cache, read_cache, Cache};
use mrfgat_core::geometry::{knn_graph_bruteforce, knn_graph_indexed, NeighborGraph};
use mrfgat_core::model::{
    forward_batch_infer, mrfgat_forward_infer, param_count, param_init, srfgat_forward,
    MrfgatConfig, SrfgatIds,
};
use mrfgat_core::train::{overfit_fixture, save_checkpoint, train, TrainConfig, TrainRun};
use mrfgat_core::PointCloud;
use rand::seq::SliceRandom;
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
    PointCloud::new(pts, None).unwrap()
}

/// Criterion 1: cmd_gradcheck on the reduced config reports max relative
/// error < 1e-4 against central finite differences in under 60 s.
#[test]
fn criterion_01_gradient_correctness() {
    let timer = Instant::now();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mrfgat"))
        .args(["gradcheck", "--points", "16", "--batch", "2", "--seed", "0"])
        .output()
        .expect("binary launches");
    let elapsed = timer.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS"), "{text}");
    let worst: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("worst relative error "))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|tok| tok.parse().ok())
        .expect("report has a worst-error line");
    assert!(worst < 1e-4, "worst {worst}");
    assert!(elapsed < 60.0, "took {elapsed}s");
    println!("[PASS] criterion 1 — gradcheck worst rel err {worst:.3e} in {elapsed:.1}s (< 1e-4, < 60s)");
}

/// Builds one standalone attention scale with random parameters.
fn random_scale(channels: usize, rng: &mut ChaCha8Rng) -> (ParamStore, SrfgatIds) {
    let mut store = ParamStore::new();
    let mut add = |store: &mut ParamStore, name: &str, rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| rng.gen::<f64>() - 0.5).collect();
        let shape = if rows == 1 {
            vec![cols]
        } else {
            vec![rows, cols]
        };
        store.add(name, Tensor::from_vec(shape, data).unwrap())
    };
    let ids = SrfgatIds {
        edge_w: add(&mut store, "e.w", 3, channels),
        edge_b: add(&mut store, "e.b", 1, channels),
        nbr_w: add(&mut store, "n.w", 3, channels),
        nbr_b: add(&mut store, "n.b", 1, channels),
        edge_score_w: add(&mut store, "s.w", channels, 1),
        edge_score_b: add(&mut store, "s.b", 1, 1),
        raw_score_w: add(&mut store, "r.w", 3, 1),
        raw_score_b: add(&mut store, "r.b", 1, 1),
    };
    (store, ids)
}

/// Criterion 2: over 1,000 random SRFGAT evaluations, every attention row
/// sums to 1 within 1e-12.
#[test]
fn criterion_02_attention_rows_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let n = rng.gen_range(4..=20);
        let k = rng.gen_range(2..=n.min(8));
        let channels = [4, 8][rng.gen_range(0..2)];
        let (store, ids) = random_scale(channels, &mut rng);
        let pc = random_cloud(n, &mut rng);
        let graph = knn_graph_bruteforce(&pc, k).unwrap();
        let out = srfgat_forward(&pc, &graph, &store, &ids, 0.2, k).unwrap();
        for weights in [&out.alpha, &out.beta] {
            for row in weights.data().chunks(k) {
                let sum: f64 = row.iter().sum();
                worst = worst.max((sum - 1.0).abs());
                rows += 1;
            }
        }
    }
    assert!(worst < 1e-12, "worst row-sum deviation {worst:.3e}");
    println!("[PASS] criterion 2 — {rows} attention rows sum to 1 (worst deviation {worst:.3e} < 1e-12)");
}

/// Criterion 3: infer-mode logits are permutation invariant to < 1e-8 on
/// 100 random clouds.
#[test]
fn criterion_03_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = MrfgatConfig::modelnet_default(10);
    let net = param_init(&config, &mut rng).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pc = random_cloud(40, &mut rng);
        let base = mrfgat_forward_infer(&pc, &net, &config).unwrap();
        let mut order: Vec<usize> = (0..pc.len()).collect();
        order.shuffle(&mut rng);
        let shuffled = PointCloud::new(
            order.iter().map(|&i| pc.points[i]).collect(),
            None,
        )
        .unwrap();
        let permuted = mrfgat_forward_infer(&shuffled, &net, &config).unwrap();
        for (a, b) in base.data().iter().zip(permuted.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-8, "logit drift {worst:.3e}");
    println!("[PASS] criterion 3 — 100 random permutations move logits by at most {worst:.3e} (< 1e-8)");
}

/// Criterion 4: the indexed kNN backend equals brute force bit-for-bit on
/// 1,000 random clouds (N=256, k=16) and on duplicate-point clouds.
#[test]
fn criterion_04_knn_backends_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let check = |pc: &PointCloud, k: usize| -> (NeighborGraph, NeighborGraph) {
        (
            knn_graph_bruteforce(pc, k).unwrap(),
            knn_graph_indexed(pc, k).unwrap(),
        )
    };
    for trial in 0..1_000 {
        let pc = random_cloud(256, &mut rng);
        let (brute, indexed) = check(&pc, 16);
        assert_eq!(brute, indexed, "disagreement on random cloud {trial}");
    }
    // Degenerate clouds: every point identical; pairs of duplicates.
    let same = PointCloud::new(vec![[0.25, -0.5, 0.125]; 64], None).unwrap();
    let (brute, indexed) = check(&same, 16);
    assert_eq!(brute, indexed, "disagreement on constant cloud");
    let mut pts = Vec::new();
    for i in 0..128 {
        let p = [i as f64 * 0.01, (i % 7) as f64, -(i as f64)];
        pts.push(p);
        pts.push(p);
    }
    let doubled = PointCloud::new(pts, None).unwrap();
    let (brute, indexed) = check(&doubled, 16);
    assert_eq!(brute, indexed, "disagreement on duplicated cloud");
    println!("[PASS] criterion 4 — kNN backends bit-identical on 1,000 random + degenerate clouds");
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x < 0.0 {
        slope * x
    } else {
        x
    }
}

fn softmax_row(scores: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        denom += *s;
    }
    for s in scores.iter_mut() {
        *s /= denom;
    }
}

/// Plain-loop reimplementation of one attention scale, kept deliberately
/// independent of the tape: affine maps, LeakyReLU scores, per-row softmax,
/// weighted sums, final ReLU on the concatenated context, max over K.
#[allow(clippy::needless_range_loop)]
fn oracle_srfgat(
    pc: &PointCloud,
    graph: &NeighborGraph,
    store: &ParamStore,
    ids: &SrfgatIds,
    slope: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let f = store.get(ids.edge_b).value.numel();
    let (n, k) = (pc.len(), graph.k);
    let ew = store.get(ids.edge_w).value.data();
    let eb = store.get(ids.edge_b).value.data();
    let nw = store.get(ids.nbr_w).value.data();
    let nb = store.get(ids.nbr_b).value.data();
    let sw = store.get(ids.edge_score_w).value.data();
    let sb = store.get(ids.edge_score_b).value.data();
    let rw = store.get(ids.raw_score_w).value.data();
    let rb = store.get(ids.raw_score_b).value.data();

    let mut context = Vec::with_capacity(n * 2 * f);
    let mut edge_local = Vec::with_capacity(n * f);
    let mut alphas = Vec::with_capacity(n * k);
    let mut betas = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut e_prime = vec![vec![0.0; f]; k];
        let mut p_prime = vec![vec![0.0; f]; k];
        let mut alpha = vec![0.0; k];
        let mut beta = vec![0.0; k];
        for j in 0..k {
            let e = graph.edge(i, j);
            let p = pc.points[graph.row_indices(i)[j] as usize];
            for c in 0..f {
                let mut se = eb[c];
                let mut sp = nb[c];
                for d in 0..3 {
                    se += e[d] * ew[d * f + c];
                    sp += p[d] * nw[d * f + c];
                }
                e_prime[j][c] = se.max(0.0);
                p_prime[j][c] = sp.max(0.0);
            }
            let mut a = sb[0];
            for c in 0..f {
                a += e_prime[j][c] * sw[c];
            }
            alpha[j] = leaky(a, slope);
            let mut b = rb[0];
            for d in 0..3 {
                b += e[d] * rw[d];
            }
            beta[j] = leaky(b, slope);
        }
        softmax_row(&mut alpha);
        softmax_row(&mut beta);
        for c in 0..f {
            let sum: f64 = (0..k).map(|j| alpha[j] * e_prime[j][c]).sum();
            context.push(sum.max(0.0));
        }
        for c in 0..f {
            let sum: f64 = (0..k).map(|j| beta[j] * p_prime[j][c]).sum();
            context.push(sum.max(0.0));
        }
        for c in 0..f {
            let m = (0..k).map(|j| e_prime[j][c]).fold(f64::NEG_INFINITY, f64::max);
            edge_local.push(m);
        }
        alphas.extend_from_slice(&alpha);
        betas.extend_from_slice(&beta);
    }
    (context, edge_local, alphas, betas)
}

/// Criterion 5: the tape-based layer matches the explicit-loop oracle to
/// 1e-10 on 100 random instances.
#[test]
fn criterion_05_srfgat_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(6..=16);
        let k = rng.gen_range(2..=n.min(10));
        let channels = rng.gen_range(3..=9);
        let (store, ids) = random_scale(channels, &mut rng);
        let pc = random_cloud(n, &mut rng);
        let graph = knn_graph_bruteforce(&pc, k).unwrap();
        let out = srfgat_forward(&pc, &graph, &store, &ids, 0.2, k).unwrap();
        let (context, edge_local, alpha, beta) = oracle_srfgat(&pc, &graph, &store, &ids, 0.2);
        for (got, want) in [
            (out.context.data(), &context),
            (out.edge_local.data(), &edge_local),
            (out.alpha.data(), &alpha),
            (out.beta.data(), &beta),
        ] {
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    assert!(worst < 1e-10, "worst deviation {worst:.3e}");
    println!("[PASS] criterion 5 — tape layer matches loop oracle on 100 instances (worst {worst:.3e} < 1e-10)");
}

/// Criterion 6: the 2-class × 8-cloud fixture reaches ≥ 95% train accuracy
/// within 200 epochs, in well under 5 minutes.
#[test]
fn criterion_06_overfit_smoke() {
    let timer = Instant::now();
    let cache = overfit_fixture(8, 0, 16, 31);
    let model = MrfgatConfig {
        num_classes: 2,
        ..MrfgatConfig::reduced_test()
    };
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        lr_decay: None,
        seed: 6,
        augment: None,
        ..TrainConfig::default()
    };
    let run = train(&cache, &model, &cfg).unwrap();
    let elapsed = timer.elapsed().as_secs_f64();
    let best = run
        .logs
        .iter()
        .map(|l| l.train_acc)
        .fold(0.0f64, f64::max);
    let reached = run.logs.iter().find(|l| l.train_acc >= 0.95).map(|l| l.epoch);
    assert!(best >= 0.95, "train accuracy only {best} after 200 epochs");
    assert!(elapsed < 300.0, "took {elapsed}s");
    println!(
        "[PASS] criterion 6 — overfit fixture reaches {best:.2} train accuracy (≥ 0.95 from epoch {}) in {elapsed:.1}s",
        reached.unwrap()
    );
}

/// Shared runner for the desk-scale criteria: a 10% stratified ModelNet10
/// subset at 256 points, 50 epochs.
fn desk_scale_run(seed: u64) -> (TrainRun, Cache) {
    let raw = std::env::var("MRFGAT_MODELNET10_DIR").expect(
        "criterion needs the raw ModelNet10 dataset: \
         set MRFGAT_MODELNET10_DIR=<path to ModelNet10 root> and rerun with --ignored",
    );
    let cache_path = std::env::temp_dir().join("mrfgat-acceptance-mn10-256.cache");
    if !cache_path.is_file() {
        let summary = build_cache(raw.as_ref(), &cache_path, 256, 0).unwrap();
        assert!(
            summary.skipped.is_empty(),
            "dataset files failed to parse: {:?}",
            summary.skipped
        );
    }
    let cache = read_cache(&cache_path).unwrap();
    let model = MrfgatConfig::modelnet_default(10);
    let cfg = TrainConfig {
        epochs: 50,
        subset_fraction: Some(0.1),
        seed,
        ..TrainConfig::default()
    };
    (train(&cache, &model, &cfg).unwrap(), cache)
}

/// Criterion 7: the desk-scale run reaches test OA ≥ 0.60 (chance 0.10)
/// within two hours on a desktop CPU.
#[test]
#[ignore = "needs MRFGAT_MODELNET10_DIR and a multi-hour CPU budget; run with --ignored"]
fn criterion_07_desk_scale_learning_signal() {
    let timer = Instant::now();
    let (run, _) = desk_scale_run(0);
    let elapsed = timer.elapsed().as_secs_f64();
    let best = run.checkpoint.best_oa;
    assert!(best >= 0.60, "best test OA {best:.4} < 0.60");
    assert!(elapsed < 7_200.0, "took {elapsed}s");
    println!("[PASS] criterion 7 — desk-scale run: best test OA {best:.4} (≥ 0.60) in {elapsed:.0}s");
}

/// Criterion 8: Table-1 numbers are documented as aspirational targets with
/// the full-run configuration, not claimed as desk results.
#[test]
fn criterion_08_paper_targets_documented_as_aspirational() {
    let readme_path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md");
    let text = std::fs::read_to_string(readme_path).expect("repo README exists");
    for needle in ["95.0", "95.6", "90.1", "92.5", "aspirational", "modelnet40-default"] {
        assert!(text.contains(needle), "README is missing {needle:?}");
    }
    println!("[PASS] criterion 8 — README records Table-1 targets as aspirational with the full-run config");
}

/// Criterion 9: param_count and every intermediate width match the
/// documented schedule, against an independent layer-by-layer tally.
#[test]
fn criterion_09_shape_audit() {
    let config = MrfgatConfig::modelnet_default(40);

    // Independent tally, written out layer by layer.
    let affine = |cin: usize, cout: usize| cin * cout + cout;
    let affine_bn = |cin: usize, cout: usize| cin * cout + 3 * cout;
    let scale = |f: usize| 2 * affine(3, f) + affine(f, 1) + affine(3, 1);
    let scales: usize = [8, 16, 16, 24].iter().map(|&f| scale(f)).sum();
    let mlps = affine_bn(128, 128) + affine_bn(128, 64) + affine_bn(64, 64) + affine_bn(64, 64);
    let global = affine_bn(128 + 64 + 64 + 64 + 64, 1024);
    let head = affine_bn(1024, 512) + affine_bn(512, 256);
    let logits = affine(256, 40);
    let tally = scales + mlps + global + head + logits;
    assert_eq!(tally, 1_098_556);
    assert_eq!(param_count(&config), tally);

    // Concatenation widths from the published channel schedule.
    assert_eq!(config.concat_width(), 2 * (8 + 16 + 16 + 24));
    assert_eq!(config.concat_width(), 128);
    assert_eq!(config.pre_global_width(), 384);

    // Every intermediate width in an actual forward pass.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = param_init(&config, &mut rng).unwrap();
    let clouds: Vec<PointCloud> = (0..2).map(|_| random_cloud(40, &mut rng)).collect();
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let bf = forward_batch_infer(&refs, &net, &config).unwrap();
    let want = [
        ("scale_concat", 128),
        ("mlp1", 128),
        ("mlp2", 64),
        ("mlp3", 64),
        ("mlp4", 64),
        ("skip_concat", 384),
        ("global", 1024),
        ("global_pooled", 1024),
        ("head1", 512),
        ("head2", 256),
        ("logits", 40),
    ];
    assert_eq!(bf.widths.len(), want.len());
    for ((name, width), (want_name, want_width)) in bf.widths.iter().zip(want) {
        assert_eq!((name.as_str(), *width), (want_name, want_width));
    }
    println!("[PASS] criterion 9 — param_count 1,098,556 and all 11 stage widths match the schedule");
}

/// Criterion 10: two desk-scale runs with identical seeds produce identical
/// epoch logs and byte-identical final checkpoints.
#[test]
#[ignore = "needs MRFGAT_MODELNET10_DIR and two multi-hour runs; run with --ignored"]
fn criterion_10_desk_scale_determinism() {
    // Single-lane mode; ignore the error if a pool already exists, since
    // evaluation reduces with integer counts in a fixed order either way.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let (a, _) = desk_scale_run(0);
    let (b, _) = desk_scale_run(0);
    assert_eq!(a.logs.len(), b.logs.len());
    for (x, y) in a.logs.iter().zip(&b.logs) {
        assert!(x.same_trajectory(y), "epoch {} diverged", x.epoch);
    }
    let dir = tempfile::tempdir().unwrap();
    let bytes = |run: &TrainRun, name: &str| {
        let p = dir.path().join(name);
        save_checkpoint(&run.checkpoint, &p).unwrap();
        std::fs::read(p).unwrap()
    };
    assert_eq!(bytes(&a, "a.ckpt"), bytes(&b, "b.ckpt"));
    println!("[PASS] criterion 10 — identical seeds give identical logs and byte-identical checkpoints");
}
