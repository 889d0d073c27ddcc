//! Knowledge compilation: linear threshold tests and single-hidden-layer
//! step networks to reduced OBDDs, context compilation for FoCS CPTs, and
//! exact marginals by weighted model counting under a factorized prior.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::focs::{FoCSCpt, Scorer};
use crate::mlp::{logit, StepNetwork};
use crate::obdd::{BddId, ObddBuilder, ObddError, BDD_FALSE, BDD_TRUE};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Obdd(#[from] ObddError),
    #[error("step-network compilation requires a single hidden layer")]
    NotSingleHidden,
    #[error("context index {index} out of range for {count} contexts")]
    BadContext { index: usize, count: usize },
    #[error("context masses sum to {sum}, expected 1")]
    MassMismatch { sum: f64 },
}

/// Linear test `sum(w_i * u_i) >= threshold` over binary inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearThreshold {
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl LinearThreshold {
    pub fn eval(&self, u: &[u8]) -> bool {
        let sum: f64 = self
            .weights
            .iter()
            .zip(u)
            .map(|(w, &b)| w * f64::from(b))
            .sum();
        sum >= self.threshold
    }

    /// Variable order by descending absolute weight; ties by index.
    pub fn default_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.weights.len()).collect();
        order.sort_by(|&a, &b| {
            self.weights[b]
                .abs()
                .partial_cmp(&self.weights[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        order
    }
}

/// Partial sums within one compilation are bucketed on a 1e-9 grid for
/// memoization; weights differing below that resolution are treated as
/// equal completions.
const SUM_BUCKET: f64 = 1e9;

struct ThresholdCompiler<'a> {
    builder: &'a mut ObddBuilder,
    /// Variable id at each recursion depth.
    vars: Vec<usize>,
    weights: Vec<f64>,
    rhs: f64,
    strict: bool,
    /// Suffix minima/maxima of the remaining weight mass below each depth.
    min_rest: Vec<f64>,
    max_rest: Vec<f64>,
    memo: HashMap<(usize, i64), BddId>,
}

impl ThresholdCompiler<'_> {
    fn passes(&self, sum: f64) -> bool {
        if self.strict {
            sum > self.rhs
        } else {
            sum >= self.rhs
        }
    }

    fn compile(&mut self, depth: usize, sum: f64) -> Result<BddId, ObddError> {
        // Prune when every completion is decided.
        if self.passes(sum + self.min_rest[depth]) {
            return Ok(BDD_TRUE);
        }
        if !self.passes(sum + self.max_rest[depth]) {
            return Ok(BDD_FALSE);
        }
        let key = (depth, (sum * SUM_BUCKET).round() as i64);
        if let Some(&id) = self.memo.get(&key) {
            return Ok(id);
        }
        let var = self.vars[depth];
        let lo = self.compile(depth + 1, sum)?;
        let hi = self.compile(depth + 1, sum + self.weights[depth])?;
        let id = self.builder.mk(var, lo, hi)?;
        self.memo.insert(key, id);
        Ok(id)
    }
}

/// Compiles a linear test into an OBDD over the builder's variables.
/// `vars[d]` names the builder variable tested at recursion depth `d`
/// (which must be consistent with the builder's order), and `weights[d]`
/// its coefficient.
fn compile_linear_test(
    builder: &mut ObddBuilder,
    vars: &[usize],
    weights: &[f64],
    rhs: f64,
    strict: bool,
) -> Result<BddId, ObddError> {
    let n = vars.len();
    let mut min_rest = vec![0.0; n + 1];
    let mut max_rest = vec![0.0; n + 1];
    for d in (0..n).rev() {
        min_rest[d] = min_rest[d + 1] + weights[d].min(0.0);
        max_rest[d] = max_rest[d + 1] + weights[d].max(0.0);
    }
    let mut compiler = ThresholdCompiler {
        builder,
        vars: vars.to_vec(),
        weights: weights.to_vec(),
        rhs,
        strict,
        min_rest,
        max_rest,
        memo: HashMap::new(),
    };
    compiler.compile(0, 0.0)
}

/// Compiles `sum(w * u) >= threshold` over the inputs visited in `order`.
/// The builder must use the same order for those variables.
pub fn compile_threshold(
    builder: &mut ObddBuilder,
    lt: &LinearThreshold,
    order: &[usize],
) -> Result<BddId, CompileError> {
    assert_eq!(order.len(), lt.weights.len(), "order must cover all inputs");
    let weights: Vec<f64> = order.iter().map(|&i| lt.weights[i]).collect();
    Ok(compile_linear_test(
        builder,
        order,
        &weights,
        lt.threshold,
        false,
    )?)
}

/// Convenience wrapper: fresh builder in the threshold's default
/// (descending absolute weight) order.
pub fn compile_threshold_standalone(
    lt: &LinearThreshold,
) -> Result<(ObddBuilder, BddId), CompileError> {
    let order = lt.default_order();
    let mut builder = ObddBuilder::with_order(order.iter().map(|&v| v as u32).collect());
    let root = compile_threshold(&mut builder, lt, &order)?;
    Ok((builder, root))
}

/// Builder sized for a step network: input variables `0..n` in family
/// order, then one variable per hidden unit.
pub fn network_builder(net: &StepNetwork) -> Result<ObddBuilder, CompileError> {
    if !net.is_single_hidden() {
        return Err(CompileError::NotSingleHidden);
    }
    let n = net.input_arity();
    let m = net.hidden_layer().out_dim();
    Ok(ObddBuilder::new(n + m))
}

/// Compiles the set of inputs whose raw network output lands in `(lo, hi]`.
///
/// Each hidden unit's threshold test is compiled over the inputs; the
/// interval test on the affine output is compiled over the hidden
/// variables as `(o > lo) and not (o > hi)`; the hidden variables are then
/// substituted by their input-space functions.
pub fn compile_step_network(
    builder: &mut ObddBuilder,
    net: &StepNetwork,
    interval: (f64, f64),
) -> Result<BddId, CompileError> {
    if !net.is_single_hidden() {
        return Err(CompileError::NotSingleHidden);
    }
    let n = net.input_arity();
    let hidden = net.hidden_layer();
    let m = hidden.out_dim();
    let input_order: Vec<usize> = (0..n).collect();
    // h_j = [w_j . u + b_j >= 0]  <=>  [w_j . u >= -b_j]
    let mut hidden_fns = Vec::with_capacity(m);
    for j in 0..m {
        let weights: Vec<f64> = hidden.w[j].clone();
        let g = compile_linear_test(builder, &input_order, &weights, -hidden.b[j], false)?;
        hidden_fns.push(g);
    }
    let (out_w, out_b) = net.output_affine();
    let hidden_vars: Vec<usize> = (n..n + m).collect();
    let (lo, hi) = interval;
    // o > lo  <=>  v . h > lo - c (strict)
    let above_lo = if lo == f64::NEG_INFINITY {
        BDD_TRUE
    } else {
        compile_linear_test(builder, &hidden_vars, out_w, lo - out_b, true)?
    };
    let above_hi = if hi == f64::INFINITY {
        BDD_FALSE
    } else {
        compile_linear_test(builder, &hidden_vars, out_w, hi - out_b, true)?
    };
    let not_above_hi = builder.not(above_hi)?;
    let mut f = builder.and(above_lo, not_above_hi)?;
    for (j, &g) in hidden_fns.iter().enumerate() {
        f = builder.compose(f, n + j, g)?;
    }
    Ok(f)
}

/// Maps a FoCS CPT's scorer and intervals into step-network space: a step
/// scorer is used as-is; a sigmoid scorer is converted to steps and its
/// probability-space endpoints are mapped through the inverse sigmoid.
pub fn step_form(cpt: &FoCSCpt) -> Result<(StepNetwork, Vec<(f64, f64)>), CompileError> {
    match &cpt.scorer {
        Scorer::Step(net) => Ok((
            net.clone(),
            cpt.pairs.iter().map(|(c, _)| (c.lo, c.hi)).collect(),
        )),
        Scorer::Mlp(net) => {
            let step = net
                .to_step(false)
                .map_err(|_| CompileError::NotSingleHidden)?;
            let intervals = cpt
                .pairs
                .iter()
                .map(|(c, _)| (logit(c.lo), logit(c.hi)))
                .collect();
            Ok((step, intervals))
        }
    }
}

/// Compiles one context of the CPT into an OBDD over the parent variables.
pub fn compile_context(
    builder: &mut ObddBuilder,
    cpt: &FoCSCpt,
    index: usize,
) -> Result<BddId, CompileError> {
    let (net, intervals) = step_form(cpt)?;
    let interval = *intervals
        .get(index)
        .ok_or(CompileError::BadContext {
            index,
            count: intervals.len(),
        })?;
    compile_step_network(builder, &net, interval)
}

/// Compiles every context against one shared builder.
pub fn compile_all_contexts(cpt: &FoCSCpt) -> Result<(ObddBuilder, Vec<BddId>), CompileError> {
    let (net, intervals) = step_form(cpt)?;
    let mut builder = network_builder(&net)?;
    let roots = intervals
        .iter()
        .map(|&iv| compile_step_network(&mut builder, &net, iv))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((builder, roots))
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalResult {
    /// Pr(child = 1) under the factorized parent prior.
    pub p_child: f64,
    /// Prior mass of each context, summing to 1.
    pub context_masses: Vec<f64>,
}

/// Exact marginal of the child under a fully factorized parent prior:
/// `Pr(x=1) = sum_i p1(ctx_i) * wmc(ctx_i)`.
pub fn marginal(cpt: &FoCSCpt, prior: &[f64]) -> Result<MarginalResult, CompileError> {
    let (builder, roots) = compile_all_contexts(cpt)?;
    let n = prior.len();
    // Hidden variables never survive composition; pad their prior slots.
    let mut padded = prior.to_vec();
    padded.resize(builder.num_vars(), 0.5);
    let masses: Vec<f64> = roots.iter().map(|&r| builder.wmc(r, &padded)).collect();
    let sum: f64 = masses.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CompileError::MassMismatch { sum });
    }
    let _ = n;
    let p_child = cpt
        .pairs
        .iter()
        .zip(&masses)
        .map(|((_, col), &m)| col.p1 * m)
        .sum();
    Ok(MarginalResult {
        p_child,
        context_masses: masses,
    })
}

/// JSON-serializable compilation summary for one context.
#[derive(Debug, Clone, Serialize)]
pub struct ObddStats {
    pub context: usize,
    pub node_count: usize,
    pub model_count: f64,
}
