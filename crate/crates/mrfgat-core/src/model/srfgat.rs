//! Single-scale graph-attention layer.
//!
//! For each point i with neighbors j (self included, K per row):
//!
//! - edge features `e′_ij = h(e_ij)` and neighbor features `p′_ij = h(p_ij)`
//!   with `h` an affine map into F′ channels followed by ReLU (Eqs. 1–2);
//! - attention scores `a_ij = LeakyReLU(g(e′_ij))` over the transformed
//!   edges and `b_ij = LeakyReLU(g(e_ij))` over the raw edges, `g` an
//!   affine map to one channel (Eq. 3);
//! - `α, β` = softmax of the scores across the K neighbors (Eq. 4);
//! - `context_i = ReLU( Σ_j α_ij e′_ij ‖ Σ_j β_ij p′_ij )` (Eq. 5), width
//!   2F′;
//! - `edge_local_i = max_j e′_ij`, the per-scale edge-feature branch that
//!   later joins the skip concatenation.

use crate::autodiff::{Activation, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{NeighborGraph, PointCloud};

/// Parameter handles of one scale: two 3→F′ transforms and two scorers.
#[derive(Debug, Clone, Copy)]
pub struct SrfgatIds {
    pub edge_w: ParamId,
    pub edge_b: ParamId,
    pub nbr_w: ParamId,
    pub nbr_b: ParamId,
    /// `g` applied to e′ (F′ → 1).
    pub edge_score_w: ParamId,
    pub edge_score_b: ParamId,
    /// `g` applied to the raw edge (3 → 1).
    pub raw_score_w: ParamId,
    pub raw_score_b: ParamId,
}

pub(crate) struct SrfgatVars {
    pub context: Var,
    pub edge_local: Var,
    pub alpha: Var,
    pub beta: Var,
}

/// Records the attention layer on an existing tape. `edges` and `nbrs` are
/// `[..., K, 3]` with matching leading axes; outputs keep those leading axes.
pub(crate) fn srfgat_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &SrfgatIds,
    edges: Var,
    nbrs: Var,
    slope: f64,
) -> Result<SrfgatVars> {
    let ew = tape.param(store, ids.edge_w);
    let eb = tape.param(store, ids.edge_b);
    let nw = tape.param(store, ids.nbr_w);
    let nb = tape.param(store, ids.nbr_b);
    let sw = tape.param(store, ids.edge_score_w);
    let sb = tape.param(store, ids.edge_score_b);
    let rw = tape.param(store, ids.raw_score_w);
    let rb = tape.param(store, ids.raw_score_b);

    let e_prime = tape.linear_act(edges, ew, eb, Activation::Relu)?;
    let p_prime = tape.linear_act(nbrs, nw, nb, Activation::Relu)?;

    let a_scores = tape.linear(e_prime, sw, sb)?;
    let a_scores = tape.leaky_relu(a_scores, slope)?;
    let a_scores = squeeze_last(tape, a_scores)?;
    let alpha = tape.softmax_last(a_scores);

    let b_scores = tape.linear(edges, rw, rb)?;
    let b_scores = tape.leaky_relu(b_scores, slope)?;
    let b_scores = squeeze_last(tape, b_scores)?;
    let beta = tape.softmax_last(b_scores);

    let ctx_edge = tape.weighted_sum(alpha, e_prime)?;
    let ctx_nbr = tape.weighted_sum(beta, p_prime)?;
    let cat = tape.concat_last(&[ctx_edge, ctx_nbr])?;
    let context = tape.relu(cat);

    let k_axis = tape.value(e_prime).rank() - 2;
    let edge_local = tape.reduce_max(e_prime, k_axis)?;

    Ok(SrfgatVars {
        context,
        edge_local,
        alpha,
        beta,
    })
}

/// Drops a trailing extent of 1 (score tensors are `[..., K, 1]`).
fn squeeze_last(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    debug_assert_eq!(shape.last(), Some(&1));
    tape.reshape(v, &shape[..shape.len() - 1])
}

/// Everything one scale produces for a single cloud, as plain tensors.
#[derive(Debug, Clone)]
pub struct SrfgatOutput {
    /// `[N, 2F′]` attention context.
    pub context: Tensor,
    /// `[N, F′]` max over neighbors of the transformed edges.
    pub edge_local: Tensor,
    /// `[N, K]` edge-attention rows, each summing to 1.
    pub alpha: Tensor,
    /// `[N, K]` neighbor-attention rows, each summing to 1.
    pub beta: Tensor,
}

/// Runs one attention scale over a single cloud's neighbor graph.
///
/// `expected_k` is the scale's configured neighbor count; a graph built with
/// a different K is a contract violation.
pub fn srfgat_forward(
    pc: &PointCloud,
    graph: &NeighborGraph,
    store: &ParamStore,
    ids: &SrfgatIds,
    slope: f64,
    expected_k: usize,
) -> Result<SrfgatOutput> {
    if graph.k != expected_k {
        return Err(Error::Contract(format!(
            "graph built with k = {} but the scale expects k = {expected_k}",
            graph.k
        )));
    }
    let n = pc.len();
    if graph.num_points() != n {
        return Err(Error::dim(
            "graph/cloud points",
            &[graph.num_points()],
            &[n],
        ));
    }
    let mut tape = Tape::new();
    let edges = tape.leaf(Tensor::from_vec(
        vec![n, graph.k, 3],
        graph.edges.clone(),
    )?);
    let nbrs = tape.leaf(Tensor::from_vec(
        vec![n, graph.k, 3],
        graph.neighbor_positions(pc),
    )?);
    let vars = srfgat_on_tape(&mut tape, store, ids, edges, nbrs, slope)?;
    Ok(SrfgatOutput {
        context: tape.value(vars.context).clone(),
        edge_local: tape.value(vars.edge_local).clone(),
        alpha: tape.value(vars.alpha).clone(),
        beta: tape.value(vars.beta).clone(),
    })
}

/// Registers one scale's parameters (used by network construction and by
/// tests that need a standalone scale).
pub(crate) fn add_scale_params(
    store: &mut ParamStore,
    scale: usize,
    channels: usize,
    mut draw: impl FnMut(&mut ParamStore, String, usize, usize) -> ParamId,
) -> SrfgatIds {
    let p = |s: &str| format!("scale{scale}.{s}");
    let edge_w = draw(store, p("edge.w"), 3, channels);
    let edge_b = zero_bias(store, p("edge.b"), channels);
    let nbr_w = draw(store, p("nbr.w"), 3, channels);
    let nbr_b = zero_bias(store, p("nbr.b"), channels);
    let edge_score_w = draw(store, p("edge_score.w"), channels, 1);
    let edge_score_b = zero_bias(store, p("edge_score.b"), 1);
    let raw_score_w = draw(store, p("raw_score.w"), 3, 1);
    let raw_score_b = zero_bias(store, p("raw_score.b"), 1);
    SrfgatIds {
        edge_w,
        edge_b,
        nbr_w,
        nbr_b,
        edge_score_w,
        edge_score_b,
        raw_score_w,
        raw_score_b,
    }
}

pub(crate) fn zero_bias(store: &mut ParamStore, name: String, width: usize) -> ParamId {
    store.add(name, Tensor::zeros(&[width]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::knn_graph_bruteforce;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Glorot-style draw used by tests; exact distribution is irrelevant
    /// here, only determinism and shape.
    fn test_scale(rng: &mut ChaCha8Rng, channels: usize) -> (ParamStore, SrfgatIds) {
        let mut store = ParamStore::new();
        let ids = add_scale_params(&mut store, 0, channels, |s, name, fan_in, fan_out| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                .collect();
            s.add(name, Tensor::from_vec(vec![fan_in, fan_out], data).unwrap())
        });
        (store, ids)
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
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
        .unwrap()
    }

    #[test]
    fn k_one_degenerate_graph() {
        // Self only: alpha = beta = [1]; the edge half of the context is
        // ReLU(h(0)) and the neighbor half is ReLU(h(p_i)).
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let channels = 4;
        let (store, ids) = test_scale(&mut rng, channels);
        let pc = random_cloud(&mut rng, 5);
        let graph = knn_graph_bruteforce(&pc, 1).unwrap();
        let out = srfgat_forward(&pc, &graph, &store, &ids, 0.2, 1).unwrap();
        assert_eq!(out.alpha.shape(), &[5, 1]);
        for v in out.alpha.data().iter().chain(out.beta.data()) {
            assert_eq!(*v, 1.0);
        }
        // Recompute the two halves by hand from the raw parameters.
        let eb = store.get(ids.edge_b).value.data();
        let nw = store.get(ids.nbr_w).value.data();
        let nb = store.get(ids.nbr_b).value.data();
        for (i, p) in pc.points.iter().enumerate() {
            for c in 0..channels {
                let edge_half = eb[c].max(0.0); // h(0) = relu(bias)
                let mut pre = nb[c];
                for a in 0..3 {
                    pre += p[a] * nw[a * channels + c];
                }
                let nbr_half = pre.max(0.0);
                let row = &out.context.data()[i * 2 * channels..(i + 1) * 2 * channels];
                assert!((row[c] - edge_half).abs() < 1e-12);
                assert!((row[channels + c] - nbr_half).abs() < 1e-12);
                // edge_local over a single neighbor is just h(0).
                let el = out.edge_local.data()[i * channels + c];
                assert!((el - edge_half).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_offsets_give_uniform_attention() {
        // All points coincide, so every edge is the zero vector and softmax
        // symmetry forces alpha = beta = 1/K.
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (store, ids) = test_scale(&mut rng, 6);
        let pc = PointCloud::new(vec![[0.3, -0.1, 0.8]; 6], None).unwrap();
        let graph = knn_graph_bruteforce(&pc, 4).unwrap();
        let out = srfgat_forward(&pc, &graph, &store, &ids, 0.2, 4).unwrap();
        for v in out.alpha.data().iter().chain(out.beta.data()) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (store, ids) = test_scale(&mut rng, 8);
        for _ in 0..20 {
            let pc = random_cloud(&mut rng, 16);
            let graph = knn_graph_bruteforce(&pc, 5).unwrap();
            let out = srfgat_forward(&pc, &graph, &store, &ids, 0.2, 5).unwrap();
            for row in out.alpha.data().chunks(5).chain(out.beta.data().chunks(5)) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            }
        }
    }

    #[test]
    fn context_width_and_k_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (store, ids) = test_scale(&mut rng, 8);
        let pc = random_cloud(&mut rng, 16);
        let graph = knn_graph_bruteforce(&pc, 4).unwrap();
        let out = srfgat_forward(&pc, &graph, &store, &ids, 0.2, 4).unwrap();
        assert_eq!(out.context.shape(), &[16, 16]);
        assert_eq!(out.edge_local.shape(), &[16, 8]);
        let err = srfgat_forward(&pc, &graph, &store, &ids, 0.2, 8).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn matches_explicit_loop_reimplementation() {
        // Independent straight-line oracle: no tape, explicit loops.
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for trial in 0..10 {
            let channels = 4 + (trial % 3);
            let (store, ids) = test_scale(&mut rng, channels);
            let pc = random_cloud(&mut rng, 16);
            let k = 5;
            let graph = knn_graph_bruteforce(&pc, k).unwrap();
            let got = srfgat_forward(&pc, &graph, &store, &ids, 0.2, k).unwrap();
            let want = oracle(&pc, &graph, &store, &ids, 0.2, channels);
            assert!(got.context.max_abs_diff(&want.0) < 1e-10, "trial {trial}");
            assert!(got.edge_local.max_abs_diff(&want.1) < 1e-10);
        }
    }

    /// Explicit-loop SRFGAT: every formula written out scalar by scalar.
    fn oracle(
        pc: &PointCloud,
        graph: &NeighborGraph,
        store: &ParamStore,
        ids: &SrfgatIds,
        slope: f64,
        f: usize,
    ) -> (Tensor, Tensor) {
        let n = pc.len();
        let k = graph.k;
        let get = |id: ParamId| store.get(id).value.data();
        let (ew, eb) = (get(ids.edge_w), get(ids.edge_b));
        let (nw, nb) = (get(ids.nbr_w), get(ids.nbr_b));
        let (sw, sb) = (get(ids.edge_score_w), get(ids.edge_score_b));
        let (rw, rb) = (get(ids.raw_score_w), get(ids.raw_score_b));
        let leaky = |x: f64| if x < 0.0 { slope * x } else { x };
        let mut context = vec![0.0; n * 2 * f];
        let mut edge_local = vec![0.0; n * f];
        for i in 0..n {
            let mut e_prime = vec![vec![0.0; f]; k];
            let mut p_prime = vec![vec![0.0; f]; k];
            let mut a = vec![0.0; k];
            let mut b = vec![0.0; k];
            for j in 0..k {
                let e = graph.edge(i, j);
                let nbr = pc.points[graph.row_indices(i)[j] as usize];
                for c in 0..f {
                    let mut ve = eb[c];
                    let mut vp = nb[c];
                    for ax in 0..3 {
                        ve += e[ax] * ew[ax * f + c];
                        vp += nbr[ax] * nw[ax * f + c];
                    }
                    e_prime[j][c] = ve.max(0.0);
                    p_prime[j][c] = vp.max(0.0);
                }
                let mut sa = sb[0];
                for c in 0..f {
                    sa += e_prime[j][c] * sw[c];
                }
                a[j] = leaky(sa);
                let mut sbv = rb[0];
                for ax in 0..3 {
                    sbv += e[ax] * rw[ax];
                }
                b[j] = leaky(sbv);
            }
            let softmax = |s: &[f64]| {
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let d: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / d).collect::<Vec<f64>>()
            };
            let alpha = softmax(&a);
            let beta = softmax(&b);
            for c in 0..f {
                let mut ce = 0.0;
                let mut cp = 0.0;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..k {
                    ce += alpha[j] * e_prime[j][c];
                    cp += beta[j] * p_prime[j][c];
                    mx = mx.max(e_prime[j][c]);
                }
                context[i * 2 * f + c] = ce.max(0.0);
                context[i * 2 * f + f + c] = cp.max(0.0);
                edge_local[i * f + c] = mx;
            }
        }
        (
            Tensor::from_vec(vec![n, 2 * f], context).unwrap(),
            Tensor::from_vec(vec![n, f], edge_local).unwrap(),
        )
    }
}
