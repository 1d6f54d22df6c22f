//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation evaluates eagerly and records just enough on the tape to
//! run the backward pass later: operand handles plus whatever forward-time
//! byproducts the gradient needs (argmax indices, dropout masks, softmax
//! probabilities, batch statistics). Nodes are append-only, so a [`Var`] is
//! simply an index and the reverse sweep is a single right-to-left pass.
//!
//! Gradients of interior nodes are freed as soon as they have been pushed to
//! their operands; after [`Tape::backward`] only leaf gradients remain
//! queryable, which is all that parameter accumulation and gradient checking
//! need. Parameter leaves additionally remember which [`ParamId`] they came
//! from so [`Tape::accumulate_param_grads`] can fold every use of a shared
//! parameter back into its store slot.

use crate::autodiff::matmul::dgemm_into;
use crate::autodiff::params::{BnStats, ParamId, ParamStore};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Activation fused into an affine layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    /// Negative-side slope; must lie in (0, 1).
    LeakyRelu(f64),
}

impl Activation {
    fn apply(self, data: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for v in data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::LeakyRelu(s) => {
                for v in data {
                    if *v < 0.0 {
                        *v *= s;
                    }
                }
            }
        }
    }

    /// Local derivative recovered from the activation *output*.
    ///
    /// Valid because all three activations preserve sign: `relu'(0) = 0` and
    /// `leaky_relu'(0) = 1` by convention.
    fn mask_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if out < 0.0 {
                    s
                } else {
                    1.0
                }
            }
        }
    }
}

enum Op {
    Leaf,
    /// `act(x @ w + b)` with `x: [.., c_in]`, `w: [c_in, c_out]`, `b: [c_out]`.
    Affine {
        x: Var,
        w: Var,
        b: Var,
        act: Activation,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    /// Softmax over the last axis, numerically shifted by the row max.
    SoftmaxLast {
        x: Var,
    },
    /// Normalization over all leading axes, per channel of the last axis.
    /// `mean`/`inv_std` are the statistics actually used by the forward pass
    /// (batch statistics when training, running statistics when not).
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    /// Max over one axis; ties resolve to the first index, and the gradient
    /// flows only to that element.
    ReduceMax {
        x: Var,
        axis: usize,
        argmax: Vec<u32>,
    },
    ConcatLast {
        parts: Vec<Var>,
    },
    /// `out[l, f] = sum_k weights[l, k] * values[l, k, f]` over matching
    /// leading axes `l`.
    WeightedSum {
        weights: Var,
        values: Var,
    },
    /// Inverted dropout; mask entries are `0` or `1/keep`.
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    /// Mean softmax cross-entropy over the batch; `probs` is the full
    /// softmax of the logits, saved for the backward pass.
    CrossEntropy {
        logits: Var,
        labels: Vec<u32>,
        probs: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    SumAll {
        x: Var,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only computation record; see the module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_uses: Vec<(ParamId, Var)>,
}

/// Rows × channels view of a tensor: all leading axes flattened against the
/// last one.
fn rows_channels(t: &Tensor) -> (usize, usize) {
    let c = t.last_extent();
    (t.numel() / c, c)
}

fn grad_buf<'a>(slot: &'a mut Option<Tensor>, shape: &[usize]) -> &'a mut [f64] {
    slot.get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    ///
    /// Present only for leaves (interior gradients are freed during the
    /// sweep) and only when gradient actually flowed there.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input: gradient never flows into it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Differentiable input; its gradient survives `backward`.
    pub fn leaf_grad(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Copies a parameter onto the tape and records the use, so
    /// [`Tape::accumulate_param_grads`] can route its gradient back.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(Op::Leaf, store.get(id).value.clone(), true);
        self.param_uses.push((id, v));
        v
    }

    /// `x @ w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.linear_act(x, w, b, Activation::Identity)
    }

    /// Affine map with a fused activation.
    pub fn linear_act(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(s) = act {
            check_slope(s)?;
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.rank() != 2 {
            return Err(Error::dim("linear weight", wv.shape(), &[0, 0]));
        }
        let (rows, c_in) = rows_channels(xv);
        let (w_in, c_out) = (wv.shape()[0], wv.shape()[1]);
        if c_in != w_in {
            return Err(Error::dim("linear input/weight", xv.shape(), wv.shape()));
        }
        if bv.shape() != [c_out] {
            return Err(Error::dim("linear bias", bv.shape(), &[c_out]));
        }
        let mut out = vec![0.0; rows * c_out];
        dgemm_into(
            rows,
            c_in,
            c_out,
            xv.data(),
            c_in as isize,
            1,
            wv.data(),
            c_out as isize,
            1,
            0.0,
            &mut out,
        );
        for row in out.chunks_mut(c_out) {
            for (o, bias) in row.iter_mut().zip(bv.data()) {
                *o += *bias;
            }
        }
        act.apply(&mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = c_out;
        let ng = self.wants(x) || self.wants(w) || self.wants(b);
        Ok(self.push(Op::Affine { x, w, b, act }, Tensor::from_vec(shape, out)?, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).data().to_vec();
        Activation::Relu.apply(&mut out);
        let shape = self.value(x).shape().to_vec();
        let ng = self.wants(x);
        self.push(
            Op::Relu { x },
            Tensor::from_vec(shape, out).expect("same shape"),
            ng,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        check_slope(slope)?;
        let mut out = self.value(x).data().to_vec();
        Activation::LeakyRelu(slope).apply(&mut out);
        let shape = self.value(x).shape().to_vec();
        let ng = self.wants(x);
        Ok(self.push(
            Op::LeakyRelu { x, slope },
            Tensor::from_vec(shape, out)?,
            ng,
        ))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (_, c) = rows_channels(xv);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let start = out.len();
            for &v in row {
                let e = (v - m).exp();
                denom += e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v /= denom;
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.wants(x);
        self.push(
            Op::SoftmaxLast { x },
            Tensor::from_vec(shape, out).expect("same shape"),
            ng,
        )
    }

    /// Batch normalization in training mode: normalizes with the biased batch
    /// statistics and folds them into `stats` with the given momentum.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let (rows, c) = self.check_bn(x, gamma, beta, stats)?;
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        for row in xv.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; c];
        for row in xv.data().chunks(c) {
            for ((vv, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = *v - *m;
                *vv += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        for (r, b) in stats.mean.iter_mut().zip(&mean) {
            *r = momentum * *r + (1.0 - momentum) * *b;
        }
        for (r, b) in stats.var.iter_mut().zip(&var) {
            *r = momentum * *r + (1.0 - momentum) * *b;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_node(x, gamma, beta, mean, inv_std, true)
    }

    /// Batch normalization in inference mode: normalizes with the running
    /// statistics and leaves them untouched.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BnStats,
        eps: f64,
    ) -> Result<Var> {
        self.check_bn(x, gamma, beta, stats)?;
        let mean = stats.mean.clone();
        let inv_std: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_node(x, gamma, beta, mean, inv_std, false)
    }

    fn check_bn(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BnStats,
    ) -> Result<(usize, usize)> {
        let (rows, c) = rows_channels(self.value(x));
        for (name, v) in [("batch-norm gamma", gamma), ("batch-norm beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::dim(name, self.value(v).shape(), &[c]));
            }
        }
        if stats.channels() != c {
            return Err(Error::dim(
                "batch-norm running stats",
                &[stats.channels()],
                &[c],
            ));
        }
        Ok((rows, c))
    }

    fn bn_node(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_extent();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            for j in 0..c {
                out.push((row[j] - mean[j]) * inv_std[j] * gv[j] + bv[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.wants(x) || self.wants(gamma) || self.wants(beta);
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            },
            Tensor::from_vec(shape, out)?,
            ng,
        ))
    }

    /// Max over `axis`; ties pick the first index.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Invalid(format!(
                "reduce_max axis {axis} out of range for rank {}",
                xv.rank()
            )));
        }
        let shape = xv.shape();
        let outer: usize = shape[..axis].iter().product();
        let red = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        let data = xv.data();
        for o in 0..outer {
            let base = o * red * inner;
            for i in 0..inner {
                let mut best = data[base + i];
                let mut best_k = 0u32;
                for k in 1..red {
                    let v = data[base + k * inner + i];
                    if v > best {
                        best = v;
                        best_k = k as u32;
                    }
                }
                out.push(best);
                argmax.push(best_k);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let ng = self.wants(x);
        Ok(self.push(
            Op::ReduceMax { x, axis, argmax },
            Tensor::from_vec(out_shape, out)?,
            ng,
        ))
    }

    /// Concatenation along the last axis; all leading axes must match.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        let lead = self.value(parts[0]).leading_shape().to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.leading_shape() != lead.as_slice() {
                return Err(Error::dim(
                    "concat leading axes",
                    v.shape(),
                    self.value(parts[0]).shape(),
                ));
            }
            widths.push(v.last_extent());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let ng = parts.iter().any(|&p| self.wants(p));
        Ok(self.push(
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
            Tensor::from_vec(shape, out)?,
            ng,
        ))
    }

    /// Attention-style contraction: `out[l, f] = Σ_k w[l, k] · v[l, k, f]`.
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let wv = self.value(weights);
        let vv = self.value(values);
        if vv.rank() < 2 || wv.shape() != &vv.shape()[..vv.rank() - 1] {
            return Err(Error::dim("weighted_sum", wv.shape(), vv.shape()));
        }
        let f = vv.last_extent();
        let k = wv.last_extent();
        let l = wv.numel() / k;
        let mut out = vec![0.0; l * f];
        let (wd, vd) = (wv.data(), vv.data());
        for li in 0..l {
            let o = &mut out[li * f..(li + 1) * f];
            for ki in 0..k {
                let wgt = wd[li * k + ki];
                let row = &vd[(li * k + ki) * f..(li * k + ki + 1) * f];
                for (ov, rv) in o.iter_mut().zip(row) {
                    *ov += wgt * rv;
                }
            }
        }
        let mut shape = wv.shape()[..wv.rank() - 1].to_vec();
        shape.push(f);
        let ng = self.wants(weights) || self.wants(values);
        Ok(self.push(
            Op::WeightedSum { weights, values },
            Tensor::from_vec(shape, out)?,
            ng,
        ))
    }

    /// Inverted dropout: keeps each element with probability `keep` and
    /// scales survivors by `1/keep`, so expectation is preserved.
    pub fn dropout(&mut self, x: Var, keep: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Invalid(format!(
                "dropout keep probability {keep} outside (0, 1]"
            )));
        }
        let xv = self.value(x);
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..xv.numel())
            .map(|_| if rng.gen::<f64>() < keep { inv } else { 0.0 })
            .collect();
        let out: Vec<f64> = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        let ng = self.wants(x);
        Ok(self.push(Op::Dropout { x, mask }, Tensor::from_vec(shape, out)?, ng))
    }

    /// Mean softmax cross-entropy between `logits: [batch, classes]` and
    /// integer labels. Computed via the shifted log-sum-exp, never through
    /// explicit probabilities, so saturated logits stay finite.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, labels: &[u32]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 {
            return Err(Error::dim("cross_entropy logits", lv.shape(), &[0, 0]));
        }
        let (b, c) = (lv.shape()[0], lv.shape()[1]);
        if labels.len() != b {
            return Err(Error::dim("cross_entropy labels", &[labels.len()], &[b]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = Vec::with_capacity(b * c);
        let mut total = 0.0;
        for (row, &label) in lv.data().chunks(c).zip(labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - m).exp();
            }
            let lse = m + denom.ln();
            total += lse - row[label as usize];
            for &v in row {
                probs.push((v - lse).exp());
            }
        }
        let loss = total / b as f64;
        let ng = self.wants(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        let ng = self.wants(x);
        Ok(self.push(Op::Reshape { x }, t, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(name, av.shape(), bv.shape()));
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = av.shape().to_vec();
        let ng = self.wants(a) || self.wants(b);
        Ok(self.push(op, Tensor::from_vec(shape, out)?, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let ng = self.wants(x);
        self.push(
            Op::Scale { x, c },
            Tensor::from_vec(shape, out).expect("same shape"),
            ng,
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.wants(x);
        self.push(Op::SumAll { x }, Tensor::scalar(s), ng)
    }

    /// Reverse sweep from a scalar `loss`. Interior gradients are freed as
    /// soon as they are consumed; leaf gradients stay available via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        let Tape { nodes, grads, .. } = self;
        for i in (0..n).rev() {
            if grads[i].is_none() {
                continue;
            }
            let (gl, gr) = grads.split_at_mut(i);
            let dy = gr[0].as_ref().expect("checked above");
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => continue, // keep the gradient for querying
                Op::Affine { x, w, b, act } => {
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    let (rows, c_in) = rows_channels(xv);
                    let c_out = node.value.last_extent();
                    let masked;
                    let dpre: &[f64] = match act {
                        Activation::Identity => dy.data(),
                        _ => {
                            masked = dy
                                .data()
                                .iter()
                                .zip(node.value.data())
                                .map(|(&d, &o)| d * act.mask_from_output(o))
                                .collect::<Vec<f64>>();
                            &masked
                        }
                    };
                    if nodes[x.0].needs_grad {
                        let gx = grad_buf(&mut gl[x.0], xv.shape());
                        // d_x += d_pre @ w^T, with the transpose expressed
                        // through strides.
                        dgemm_into(
                            rows,
                            c_out,
                            c_in,
                            dpre,
                            c_out as isize,
                            1,
                            wv.data(),
                            1,
                            c_out as isize,
                            1.0,
                            gx,
                        );
                    }
                    if nodes[w.0].needs_grad {
                        let gw = grad_buf(&mut gl[w.0], wv.shape());
                        // d_w += x^T @ d_pre.
                        dgemm_into(
                            c_in,
                            rows,
                            c_out,
                            xv.data(),
                            1,
                            c_in as isize,
                            dpre,
                            c_out as isize,
                            1,
                            1.0,
                            gw,
                        );
                    }
                    if nodes[b.0].needs_grad {
                        let gb = grad_buf(&mut gl[b.0], &[c_out]);
                        for row in dpre.chunks(c_out) {
                            for (g, d) in gb.iter_mut().zip(row) {
                                *g += *d;
                            }
                        }
                    }
                }
                Op::Relu { x } | Op::LeakyRelu { x, .. } => {
                    let act = match &node.op {
                        Op::Relu { .. } => Activation::Relu,
                        Op::LeakyRelu { slope, .. } => Activation::LeakyRelu(*slope),
                        _ => unreachable!(),
                    };
                    if nodes[x.0].needs_grad {
                        let gx = grad_buf(&mut gl[x.0], node.value.shape());
                        for ((g, &d), &o) in gx.iter_mut().zip(dy.data()).zip(node.value.data())
                        {
                            *g += d * act.mask_from_output(o);
                        }
                    }
                }
                Op::SoftmaxLast { x } => {
                    if nodes[x.0].needs_grad {
                        let c = node.value.last_extent();
                        let gx = grad_buf(&mut gl[x.0], node.value.shape());
                        for ((ry, rd), rg) in node
                            .value
                            .data()
                            .chunks(c)
                            .zip(dy.data().chunks(c))
                            .zip(gx.chunks_mut(c))
                        {
                            let dot: f64 = ry.iter().zip(rd).map(|(&y, &d)| y * d).sum();
                            for j in 0..c {
                                rg[j] += ry[j] * (rd[j] - dot);
                            }
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    train,
                } => {
                    let xv = &nodes[x.0].value;
                    let (rows, c) = rows_channels(xv);
                    let gv = nodes[gamma.0].value.data();
                    let xhat_at =
                        |r: usize, j: usize| (xv.data()[r * c + j] - mean[j]) * inv_std[j];
                    if nodes[gamma.0].needs_grad {
                        let gg = grad_buf(&mut gl[gamma.0], &[c]);
                        for r in 0..rows {
                            for j in 0..c {
                                gg[j] += dy.data()[r * c + j] * xhat_at(r, j);
                            }
                        }
                    }
                    if nodes[beta.0].needs_grad {
                        let gb = grad_buf(&mut gl[beta.0], &[c]);
                        for row in dy.data().chunks(c) {
                            for (g, d) in gb.iter_mut().zip(row) {
                                *g += *d;
                            }
                        }
                    }
                    if nodes[x.0].needs_grad {
                        let gx = grad_buf(&mut gl[x.0], xv.shape());
                        if *train {
                            // dx = inv_std * (dxhat - mean_r(dxhat)
                            //      - xhat * mean_r(dxhat * xhat))
                            let mut s1 = vec![0.0; c];
                            let mut s2 = vec![0.0; c];
                            for r in 0..rows {
                                for j in 0..c {
                                    let dxhat = dy.data()[r * c + j] * gv[j];
                                    s1[j] += dxhat;
                                    s2[j] += dxhat * xhat_at(r, j);
                                }
                            }
                            let rn = rows as f64;
                            for r in 0..rows {
                                for j in 0..c {
                                    let dxhat = dy.data()[r * c + j] * gv[j];
                                    gx[r * c + j] += inv_std[j]
                                        * (dxhat - s1[j] / rn - xhat_at(r, j) * s2[j] / rn);
                                }
                            }
                        } else {
                            for r in 0..rows {
                                for j in 0..c {
                                    gx[r * c + j] +=
                                        dy.data()[r * c + j] * gv[j] * inv_std[j];
                                }
                            }
                        }
                    }
                }
                Op::ReduceMax { x, axis, argmax } => {
                    if nodes[x.0].needs_grad {
                        let xs = nodes[x.0].value.shape();
                        let outer: usize = xs[..*axis].iter().product();
                        let red = xs[*axis];
                        let inner: usize = xs[*axis + 1..].iter().product();
                        let gx = grad_buf(&mut gl[x.0], xs);
                        for o in 0..outer {
                            for ii in 0..inner {
                                let k = argmax[o * inner + ii] as usize;
                                gx[(o * red + k) * inner + ii] += dy.data()[o * inner + ii];
                            }
                        }
                    }
                }
                Op::ConcatLast { parts } => {
                    let total = node.value.last_extent();
                    let rows = node.value.numel() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let w = nodes[p.0].value.last_extent();
                        if nodes[p.0].needs_grad {
                            let gp = grad_buf(&mut gl[p.0], nodes[p.0].value.shape());
                            for r in 0..rows {
                                let src = &dy.data()[r * total + offset..r * total + offset + w];
                                for (g, d) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *g += *d;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::WeightedSum { weights, values } => {
                    let wv = &nodes[weights.0].value;
                    let vv = &nodes[values.0].value;
                    let k = wv.last_extent();
                    let f = vv.last_extent();
                    let l = wv.numel() / k;
                    if nodes[weights.0].needs_grad {
                        let gw = grad_buf(&mut gl[weights.0], wv.shape());
                        for li in 0..l {
                            let drow = &dy.data()[li * f..(li + 1) * f];
                            for ki in 0..k {
                                let vrow =
                                    &vv.data()[(li * k + ki) * f..(li * k + ki + 1) * f];
                                let mut acc = 0.0;
                                for (d, v) in drow.iter().zip(vrow) {
                                    acc += d * v;
                                }
                                gw[li * k + ki] += acc;
                            }
                        }
                    }
                    if nodes[values.0].needs_grad {
                        let gv = grad_buf(&mut gl[values.0], vv.shape());
                        for li in 0..l {
                            let drow = &dy.data()[li * f..(li + 1) * f];
                            for ki in 0..k {
                                let wgt = wv.data()[li * k + ki];
                                let grow =
                                    &mut gv[(li * k + ki) * f..(li * k + ki + 1) * f];
                                for (g, d) in grow.iter_mut().zip(drow) {
                                    *g += wgt * d;
                                }
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if nodes[x.0].needs_grad {
                        let gx = grad_buf(&mut gl[x.0], node.value.shape());
                        for ((g, &d), &m) in gx.iter_mut().zip(dy.data()).zip(mask) {
                            *g += d * m;
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    if nodes[logits.0].needs_grad {
                        let lv = &nodes[logits.0].value;
                        let c = lv.last_extent();
                        let scale = dy.item() / labels.len() as f64;
                        let gx = grad_buf(&mut gl[logits.0], lv.shape());
                        for (bi, &label) in labels.iter().enumerate() {
                            for j in 0..c {
                                let indicator = if j == label as usize { 1.0 } else { 0.0 };
                                gx[bi * c + j] += scale * (probs[bi * c + j] - indicator);
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    if nodes[x.0].needs_grad {
                        let gx = grad_buf(&mut gl[x.0], nodes[x.0].value.shape());
                        for (g, d) in gx.iter_mut().zip(dy.data()) {
                            *g += *d;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for v in [a, b] {
                        if nodes[v.0].needs_grad {
                            let g = grad_buf(&mut gl[v.0], node.value.shape());
                            for (g, d) in g.iter_mut().zip(dy.data()) {
                                *g += *d;
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if nodes[a.0].needs_grad {
                        let g = grad_buf(&mut gl[a.0], node.value.shape());
                        for (g, d) in g.iter_mut().zip(dy.data()) {
                            *g += *d;
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let g = grad_buf(&mut gl[b.0], node.value.shape());
                        for (g, d) in g.iter_mut().zip(dy.data()) {
                            *g -= *d;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[a.0].needs_grad {
                        let bv = nodes[b.0].value.data();
                        let g = grad_buf(&mut gl[a.0], node.value.shape());
                        for ((g, d), v) in g.iter_mut().zip(dy.data()).zip(bv) {
                            *g += *d * *v;
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let av = nodes[a.0].value.data();
                        let g = grad_buf(&mut gl[b.0], node.value.shape());
                        for ((g, d), v) in g.iter_mut().zip(dy.data()).zip(av) {
                            *g += *d * *v;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if nodes[x.0].needs_grad {
                        let g = grad_buf(&mut gl[x.0], node.value.shape());
                        for (g, d) in g.iter_mut().zip(dy.data()) {
                            *g += *d * *c;
                        }
                    }
                }
                Op::SumAll { x } => {
                    if nodes[x.0].needs_grad {
                        let d = dy.item();
                        let g = grad_buf(&mut gl[x.0], nodes[x.0].value.shape());
                        for g in g.iter_mut() {
                            *g += d;
                        }
                    }
                }
            }
            // Interior gradients are fully consumed once their node has been
            // processed; free them to bound peak memory.
            gr[0] = None;
        }
        Ok(())
    }

    /// Folds the gradients of every parameter use back into the store.
    /// Parameters used several times (or not at all) are handled by plain
    /// accumulation: absent gradients contribute nothing.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(id, var) in &self.param_uses {
            if let Some(g) = self.grads.get(var.0).and_then(|g| g.as_ref()) {
                let slot = store.get_mut(id);
                debug_assert_eq!(slot.grad.shape(), g.shape());
                for (a, b) in slot.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
    }
}

fn check_slope(s: f64) -> Result<()> {
    if !(s.is_finite() && s > 0.0 && s < 1.0) {
        return Err(Error::Invalid(format!(
            "leaky-relu slope {s} outside (0, 1)"
        )));
    }
    Ok(())
}
