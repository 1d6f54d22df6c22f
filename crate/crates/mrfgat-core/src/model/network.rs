//! End-to-end network: parameter layout, initialization, and the forward
//! pass over a batch of clouds.
//!
//! Training and inference share one implementation and differ only in how
//! batch norm reads its statistics and whether head dropout is applied.
//! Inference takes the parameters immutably — evaluating can never change
//! the model — while training updates the running statistics in place.

use crate::autodiff::gradcheck::{grad_check_param_blocks, BlockReport};
use crate::autodiff::{BnStats, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn_graph_indexed, PointCloud};
use crate::model::srfgat::{add_scale_params, srfgat_on_tape, zero_bias, SrfgatIds};
use crate::model::{MrfgatConfig, BN_EPS, BN_MOMENTUM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One linear layer with batch norm: affine parameters, BN scale/shift, and
/// the index of the layer's running statistics in `NetworkParams::stats`.
#[derive(Debug, Clone, Copy)]
pub struct MlpIds {
    pub w: ParamId,
    pub b: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
}

/// All trainable tensors plus batch-norm running statistics.
///
/// Running statistics are deliberately outside the [`ParamStore`]: the
/// optimizer never touches them and inference only reads them.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub store: ParamStore,
    pub stats: Vec<BnStats>,
    pub scales: Vec<SrfgatIds>,
    pub mlps: Vec<MlpIds>,
    pub global: MlpIds,
    pub head: Vec<MlpIds>,
    pub logits_w: ParamId,
    pub logits_b: ParamId,
}

impl NetworkParams {
    /// Cheap structural check that these parameters belong to `config`.
    pub fn check_config(&self, config: &MrfgatConfig) -> Result<()> {
        config.validate()?;
        let expected = param_count(config);
        let got = self.store.scalar_count();
        if self.scales.len() != config.num_scales
            || self.mlps.len() != config.mlp_widths.len()
            || self.head.len() != config.head_widths.len()
            || got != expected
        {
            return Err(Error::Contract(format!(
                "parameters do not match config: {got} scalars vs {expected} expected"
            )));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars for a config: affine weights and
/// biases plus batch-norm scale/shift; running statistics excluded.
pub fn param_count(config: &MrfgatConfig) -> usize {
    let mut total = 0;
    for &f in &config.scale_channels {
        total += 3 * f + f; // edge transform
        total += 3 * f + f; // neighbor transform
        total += f + 1; // edge scorer g(e')
        total += 3 + 1; // raw-edge scorer g(e)
    }
    // Linear + BN layer: weights, bias, gamma, beta.
    let affine_bn = |cin: usize, cout: usize| cin * cout + 3 * cout;
    let mut prev = config.concat_width();
    for &w in &config.mlp_widths {
        total += affine_bn(prev, w);
        prev = w;
    }
    total += affine_bn(config.pre_global_width(), config.global_width);
    let mut prev = config.global_width;
    for &w in &config.head_widths {
        total += affine_bn(prev, w);
        prev = w;
    }
    total + prev * config.num_classes + config.num_classes
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::from_vec(vec![fan_in, fan_out], data).expect("shape matches data")
}

fn add_mlp(
    store: &mut ParamStore,
    stats: &mut Vec<BnStats>,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> MlpIds {
    let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out));
    let b = zero_bias(store, format!("{name}.b"), fan_out);
    let gamma = store.add(
        format!("{name}.gamma"),
        Tensor::from_vec(vec![fan_out], vec![1.0; fan_out]).expect("shape"),
    );
    let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[fan_out]));
    stats.push(BnStats::new(fan_out));
    MlpIds {
        w,
        b,
        gamma,
        beta,
        stats: stats.len() - 1,
    }
}

/// Fresh parameters: Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`),
/// zero biases, BN scale 1 / shift 0, running stats at mean 0 / var 1.
/// Bit-identical for a fixed seed.
pub fn param_init(config: &MrfgatConfig, rng: &mut ChaCha8Rng) -> Result<NetworkParams> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut stats = Vec::new();
    let mut scales = Vec::with_capacity(config.num_scales);
    for (m, &f) in config.scale_channels.iter().enumerate() {
        scales.push(add_scale_params(
            &mut store,
            m,
            f,
            |s, name, fan_in, fan_out| s.add(name, glorot(rng, fan_in, fan_out)),
        ));
    }
    let mut mlps = Vec::with_capacity(config.mlp_widths.len());
    let mut prev = config.concat_width();
    for (i, &w) in config.mlp_widths.iter().enumerate() {
        mlps.push(add_mlp(
            &mut store,
            &mut stats,
            rng,
            &format!("mlp{i}"),
            prev,
            w,
        ));
        prev = w;
    }
    let global = add_mlp(
        &mut store,
        &mut stats,
        rng,
        "global",
        config.pre_global_width(),
        config.global_width,
    );
    let mut head = Vec::with_capacity(config.head_widths.len());
    let mut prev = config.global_width;
    for (i, &w) in config.head_widths.iter().enumerate() {
        head.push(add_mlp(
            &mut store,
            &mut stats,
            rng,
            &format!("head{i}"),
            prev,
            w,
        ));
        prev = w;
    }
    let logits_w = store.add("logits.w", glorot(rng, prev, config.num_classes));
    let logits_b = zero_bias(&mut store, "logits.b".into(), config.num_classes);
    Ok(NetworkParams {
        store,
        stats,
        scales,
        mlps,
        global,
        head,
        logits_w,
        logits_b,
    })
}

/// A recorded forward pass: the tape (for attaching a loss and running
/// backward), the logits variable `[batch, classes]`, and the audit trail of
/// intermediate channel widths.
pub struct BatchForward {
    pub tape: Tape,
    pub logits: Var,
    pub widths: Vec<(String, usize)>,
}

enum StatsAccess<'a> {
    Read(&'a [BnStats]),
    Update(&'a mut [BnStats]),
}

fn linear_bn_relu(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &MlpIds,
    x: Var,
    stats: &mut StatsAccess,
) -> Result<Var> {
    let w = tape.param(store, ids.w);
    let b = tape.param(store, ids.b);
    let pre = tape.linear(x, w, b)?;
    let gamma = tape.param(store, ids.gamma);
    let beta = tape.param(store, ids.beta);
    let bn = match stats {
        StatsAccess::Read(s) => tape.batch_norm_infer(pre, gamma, beta, &s[ids.stats], BN_EPS)?,
        StatsAccess::Update(s) => {
            tape.batch_norm_train(pre, gamma, beta, &mut s[ids.stats], BN_EPS, BN_MOMENTUM)?
        }
    };
    Ok(tape.relu(bn))
}

#[allow(clippy::too_many_arguments)]
fn forward_impl(
    clouds: &[&PointCloud],
    store: &ParamStore,
    scales: &[SrfgatIds],
    mlps: &[MlpIds],
    global: MlpIds,
    head: &[MlpIds],
    logits_w: ParamId,
    logits_b: ParamId,
    mut stats: StatsAccess<'_>,
    config: &MrfgatConfig,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchForward> {
    config.validate()?;
    if scales.len() != config.num_scales {
        return Err(Error::Contract(format!(
            "{} scale parameter sets for {} configured scales",
            scales.len(),
            config.num_scales
        )));
    }
    if clouds.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let n = clouds[0].len();
    if let Some(bad) = clouds.iter().find(|c| c.len() != n) {
        return Err(Error::dim("batch cloud sizes", &[bad.len()], &[n]));
    }
    let b = clouds.len();
    let mut tape = Tape::new();
    let mut widths = Vec::new();

    // Per scale: build each cloud's graph, stack edges and neighbor
    // positions into [b, n, k, 3] leaves, and record the attention layer.
    let mut contexts = Vec::with_capacity(scales.len());
    let mut edge_locals = Vec::with_capacity(scales.len());
    for (m, ids) in scales.iter().enumerate() {
        let k = config.neighbor_counts[m];
        let mut edges = Vec::with_capacity(b * n * k * 3);
        let mut nbrs = Vec::with_capacity(b * n * k * 3);
        for pc in clouds {
            let graph = knn_graph_indexed(pc, k)?;
            edges.extend_from_slice(&graph.edges);
            nbrs.extend_from_slice(&graph.neighbor_positions(pc));
        }
        let edges = tape.leaf(Tensor::from_vec(vec![b, n, k, 3], edges)?);
        let nbrs = tape.leaf(Tensor::from_vec(vec![b, n, k, 3], nbrs)?);
        let vars = srfgat_on_tape(&mut tape, store, ids, edges, nbrs, config.leaky_slope)?;
        contexts.push(vars.context);
        edge_locals.push(vars.edge_local);
    }

    let mut x = tape.concat_last(&contexts)?;
    widths.push(("scale_concat".into(), tape.value(x).last_extent()));

    let mut mlp_outs = Vec::with_capacity(mlps.len());
    for (i, ids) in mlps.iter().enumerate() {
        x = linear_bn_relu(&mut tape, store, ids, x, &mut stats)?;
        widths.push((format!("mlp{}", i + 1), tape.value(x).last_extent()));
        mlp_outs.push(x);
    }

    // Skip links: every MLP output plus the per-scale edge features.
    let mut parts = mlp_outs;
    parts.extend_from_slice(&edge_locals);
    let skip = tape.concat_last(&parts)?;
    widths.push(("skip_concat".into(), tape.value(skip).last_extent()));

    let global_feat = linear_bn_relu(&mut tape, store, &global, skip, &mut stats)?;
    widths.push(("global".into(), tape.value(global_feat).last_extent()));

    // Max pool over the n points: [b, n, G] -> [b, G].
    let mut x = tape.reduce_max(global_feat, 1)?;
    widths.push(("global_pooled".into(), tape.value(x).last_extent()));

    for (i, ids) in head.iter().enumerate() {
        x = linear_bn_relu(&mut tape, store, ids, x, &mut stats)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            x = tape.dropout(x, config.dropout_keep, rng)?;
        }
        widths.push((format!("head{}", i + 1), tape.value(x).last_extent()));
    }

    let lw = tape.param(store, logits_w);
    let lb = tape.param(store, logits_b);
    let logits = tape.linear(x, lw, lb)?;
    widths.push(("logits".into(), tape.value(logits).last_extent()));

    Ok(BatchForward {
        tape,
        logits,
        widths,
    })
}

/// Training-mode forward: batch-norm uses batch statistics and folds them
/// into the running stats; head dropout draws from `dropout_rng`.
pub fn forward_batch_train(
    clouds: &[&PointCloud],
    net: &mut NetworkParams,
    config: &MrfgatConfig,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<BatchForward> {
    net.check_config(config)?;
    let NetworkParams {
        store,
        stats,
        scales,
        mlps,
        global,
        head,
        logits_w,
        logits_b,
    } = net;
    forward_impl(
        clouds,
        store,
        scales,
        mlps,
        *global,
        head,
        *logits_w,
        *logits_b,
        StatsAccess::Update(stats),
        config,
        Some(dropout_rng),
    )
}

/// Inference-mode forward: running statistics, no dropout, parameters
/// untouched.
pub fn forward_batch_infer(
    clouds: &[&PointCloud],
    net: &NetworkParams,
    config: &MrfgatConfig,
) -> Result<BatchForward> {
    net.check_config(config)?;
    forward_impl(
        clouds,
        &net.store,
        &net.scales,
        &net.mlps,
        net.global,
        &net.head,
        net.logits_w,
        net.logits_b,
        StatsAccess::Read(&net.stats),
        config,
        None,
    )
}

/// Raw class scores `[classes]` for a single cloud, inference mode.
pub fn mrfgat_forward_infer(
    pc: &PointCloud,
    net: &NetworkParams,
    config: &MrfgatConfig,
) -> Result<Tensor> {
    let bf = forward_batch_infer(&[pc], net, config)?;
    let logits = bf.tape.value(bf.logits).clone();
    logits.reshaped(vec![config.num_classes])
}

/// End-to-end finite-difference check of the training loss gradient for
/// every parameter block, on synthetic clouds.
///
/// The loss is the exact function the training loop differentiates:
/// training-mode batch norm (running-stat updates isolated per evaluation)
/// and seeded dropout. Returns one report per parameter block.
pub fn model_grad_check(
    config: &MrfgatConfig,
    n_points: usize,
    batch: usize,
    seed: u64,
    eps: f64,
) -> Result<Vec<BlockReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = param_init(config, &mut rng)?;
    // Fresh parameters are a degenerate point for finite differences: biases
    // start at zero while self-edges are exactly the zero vector, parking
    // several pre-activations exactly on ReLU/LeakyReLU kinks where the
    // two-sided difference quotient disagrees with the one-sided derivative
    // convention. Jitter everything to check at a generic nearby point.
    for (_, p) in net.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += (rng.gen::<f64>() * 2.0 - 1.0) * 0.05;
        }
    }
    let clouds: Vec<PointCloud> = (0..batch)
        .map(|_| {
            PointCloud::new(
                (0..n_points)
                    .map(|_| {
                        [
                            rng.gen::<f64>() * 2.0 - 1.0,
                            rng.gen::<f64>() * 2.0 - 1.0,
                            rng.gen::<f64>() * 2.0 - 1.0,
                        ]
                    })
                    .collect(),
                None,
            )
        })
        .collect::<Result<_>>()?;
    let cloud_refs: Vec<&PointCloud> = clouds.iter().collect();
    let labels: Vec<u32> = (0..batch)
        .map(|_| rng.gen_range(0..config.num_classes) as u32)
        .collect();

    let base_stats = net.stats.clone();
    let scales = net.scales.clone();
    let mlps = net.mlps.clone();
    let head = net.head.clone();
    let (global, logits_w, logits_b) = (net.global, net.logits_w, net.logits_b);
    let run = |store: &ParamStore| -> Result<f64> {
        // Clone the running stats so repeated evaluations see the same
        // starting point; the training-mode update is a side effect that
        // must not leak between finite-difference probes.
        let mut stats = base_stats.clone();
        let mut drng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E3779B97F4A7C15);
        let bf = forward_impl(
            &cloud_refs,
            store,
            &scales,
            &mlps,
            global,
            &head,
            logits_w,
            logits_b,
            StatsAccess::Update(&mut stats),
            config,
            Some(&mut drng),
        )?;
        let mut tape = bf.tape;
        let loss = tape.cross_entropy_with_logits(bf.logits, &labels)?;
        Ok(tape.value(loss).item())
    };

    // Analytic gradients at the base point.
    {
        let mut stats = base_stats.clone();
        let mut drng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E3779B97F4A7C15);
        let bf = forward_impl(
            &cloud_refs,
            &net.store,
            &scales,
            &mlps,
            global,
            &head,
            logits_w,
            logits_b,
            StatsAccess::Update(&mut stats),
            config,
            Some(&mut drng),
        )?;
        let mut tape = bf.tape;
        let loss = tape.cross_entropy_with_logits(bf.logits, &labels)?;
        tape.backward(loss)?;
        net.store.zero_grads();
        tape.accumulate_param_grads(&mut net.store);
    }
    grad_check_param_blocks(&net.store, run, eps)
}
