//! Finite-difference gradient checking.
//!
//! Central differences `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` against
//! the tape's reverse-mode gradients, coordinate by coordinate. Relative
//! error uses the denominator `max(|analytic|, |numeric|, floor)` so that
//! near-zero gradients don't blow the ratio up.
//!
//! Both entry points first evaluate the function twice and require
//! bit-identical results: a non-deterministic function (e.g. unseeded
//! dropout) silently invalidates the whole comparison, so it is rejected
//! up front as a contract error.

use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for single-op checks, where the loss is small and the
/// difference quotient is accurate to ~1e-12.
const REL_ERR_FLOOR: f64 = 1e-8;

/// Denominator floor for whole-model parameter checks. A full forward pass
/// carries O(1) loss values, so the central difference has absolute roundoff
/// around `|loss|·ulp/(2·eps)` ≈ 1e-10 — larger than the op-level floor.
/// Coordinates whose true gradient is exactly zero (e.g. a bias feeding
/// batch norm, which the mean subtraction cancels) would otherwise report
/// that noise as error. 1e-5 absorbs the noise while still flagging any
/// absolute disagreement above ~1e-9.
const PARAM_BLOCK_FLOOR: f64 = 1e-5;

/// Outcome of checking one gradient block.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Number of coordinates compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate (flat index) at which the maximum was attained.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64, floor: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > self.max_rel_err || self.checked == 0 {
            self.max_rel_err = rel;
            self.worst_index = index;
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
        self.checked += 1;
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "checked {} coords, max rel err {:.3e} (analytic {:.6e} vs numeric {:.6e} at {})",
            self.checked, self.max_rel_err, self.worst_analytic, self.worst_numeric,
            self.worst_index
        )
    }
}

/// [`GradCheckReport`] for one named parameter block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub report: GradCheckReport,
}

/// Largest relative error across blocks.
pub fn overall_max_rel_err(blocks: &[BlockReport]) -> f64 {
    blocks
        .iter()
        .map(|b| b.report.max_rel_err)
        .fold(0.0, f64::max)
}

/// One line per block, worst first-line summary included.
pub fn format_block_reports(blocks: &[BlockReport]) -> String {
    let mut out = String::new();
    let width = blocks.iter().map(|b| b.name.len()).max().unwrap_or(0);
    for b in blocks {
        out.push_str(&format!(
            "{:<width$}  {}\n",
            b.name,
            b.report,
            width = width
        ));
    }
    out.push_str(&format!(
        "overall max rel err: {:.3e}\n",
        overall_max_rel_err(blocks)
    ));
    out
}

/// Checks the gradient of `f` with respect to its tensor input.
///
/// `f` receives a fresh tape and the input variable and must return a scalar
/// output variable; it is re-run for every perturbed coordinate, so anything
/// random inside must be re-seeded identically per call.
pub fn grad_check<F>(mut f: F, x0: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("grad_check eps {eps} must be > 0")));
    }
    let mut eval = |x: &Tensor| -> Result<(f64, Option<Tensor>)> {
        let mut tape = Tape::new();
        let xv = tape.leaf_grad(x.clone());
        let y = f(&mut tape, xv)?;
        if !tape.value(y).is_scalar() {
            return Err(Error::Contract(format!(
                "grad_check function must be scalar-valued, got shape {:?}",
                tape.value(y).shape()
            )));
        }
        let val = tape.value(y).item();
        tape.backward(y)?;
        let grad = tape.grad(xv).cloned();
        Ok((val, grad))
    };
    let (v1, grad) = eval(x0)?;
    let (v2, _) = eval(x0)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {v1:?} vs {v2:?} on identical input"
        )));
    }
    let analytic = grad.unwrap_or_else(|| Tensor::zeros(x0.shape()));
    let mut report = GradCheckReport::empty();
    let mut work = x0.clone();
    for i in 0..x0.numel() {
        let orig = x0.data()[i];
        work.data_mut()[i] = orig + eps;
        let (fp, _) = eval(&work)?;
        work.data_mut()[i] = orig - eps;
        let (fm, _) = eval(&work)?;
        work.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        report.record(i, analytic.data()[i], numeric, REL_ERR_FLOOR);
    }
    Ok(report)
}

/// Checks pre-computed analytic gradients (in `store.grad`) for every
/// parameter block against central differences of `loss`.
///
/// The caller populates the gradients first (forward, backward, accumulate);
/// `loss` must be a pure deterministic function of the parameter values.
pub fn grad_check_param_blocks<F>(
    store: &ParamStore,
    mut loss: F,
    eps: f64,
) -> Result<Vec<BlockReport>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("grad_check eps {eps} must be > 0")));
    }
    let l1 = loss(store)?;
    let l2 = loss(store)?;
    if l1.to_bits() != l2.to_bits() {
        return Err(Error::Contract(format!(
            "loss is not deterministic: {l1:?} vs {l2:?} on identical parameters"
        )));
    }
    let mut work = store.clone();
    let mut blocks = Vec::with_capacity(store.len());
    for (id, param) in store.iter() {
        let mut report = GradCheckReport::empty();
        for i in 0..param.value.numel() {
            let orig = param.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + eps;
            let fp = loss(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - eps;
            let fm = loss(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            report.record(i, param.grad.data()[i], numeric, PARAM_BLOCK_FLOOR);
        }
        blocks.push(BlockReport {
            name: param.name.clone(),
            report,
        });
    }
    Ok(blocks)
}
