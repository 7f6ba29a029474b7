//! Counterfactual explanations and recourse-cost quantities.
//!
//! Three generators are provided:
//! * [`wachter_counterfactual`]: gradient descent on `CE(h(x + d), y) + C * |d|_1`
//!   (with a smooth surrogate of the l1 term), stopping at the first iterate whose
//!   prediction equals the target.
//! * [`nun_counterfactual`]: the closest (l1) sample of a reference set that the
//!   model assigns to the target class.
//! * [`proto_counterfactual`]: the Wachter objective plus a quadratic pull towards
//!   the nearest of `n_prototypes` target-class reference samples.
//!
//! Costs are always the exact l1 norm of the perturbation. The favorable class
//! is `1`; every recourse quantity is evaluated on samples the model assigns to
//! class `0`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neuralnet::Classifier;

pub const FAVORABLE: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfMethod {
    Nun,
    Proto,
    Wachter,
}

impl CfMethod {
    pub const ALL: [CfMethod; 3] = [CfMethod::Nun, CfMethod::Proto, CfMethod::Wachter];

    pub fn as_str(self) -> &'static str {
        match self {
            CfMethod::Nun => "nun",
            CfMethod::Proto => "proto",
            CfMethod::Wachter => "wachter",
        }
    }
}

impl fmt::Display for CfMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CfMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nun" => Ok(CfMethod::Nun),
            "proto" => Ok(CfMethod::Proto),
            "wachter" => Ok(CfMethod::Wachter),
            other => Err(Error::InvalidConfig(format!(
                "unknown counterfactual method `{other}` (expected nun, proto or wachter)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub delta: Vec<f64>,
    pub x_cf: Vec<f64>,
    pub y_target: u8,
    pub cost: f64,
    pub converged: bool,
    pub method: CfMethod,
}

impl Counterfactual {
    fn new(x_orig: &[f64], delta: Vec<f64>, y_target: u8, converged: bool, method: CfMethod) -> Self {
        let x_cf = x_orig.iter().zip(&delta).map(|(x, d)| x + d).collect();
        Self {
            cost: cost_l1(&delta),
            delta,
            x_cf,
            y_target,
            converged,
            method,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecourseConfig {
    /// Weight of the l1 cost term.
    pub c: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub n_prototypes: usize,
    pub proto_weight: f64,
    /// Smoothing of `sqrt(d^2 + eps)` used in place of `|d|` during optimization.
    pub smoothing: f64,
}

impl Default for RecourseConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            max_iters: 500,
            step_size: 0.05,
            n_prototypes: 5,
            proto_weight: 0.5,
            smoothing: 1e-8,
        }
    }
}

impl RecourseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.c) {
            return Err(Error::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if !positive(self.step_size) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 || self.n_prototypes == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and n_prototypes must be at least 1".into(),
            ));
        }
        if !(self.proto_weight >= 0.0 && self.proto_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prototype weight must be non-negative, got {}",
                self.proto_weight
            )));
        }
        if !positive(self.smoothing) {
            return Err(Error::InvalidConfig("smoothing must be positive".into()));
        }
        Ok(())
    }
}

pub fn cost_l1(delta: &[f64]) -> f64 {
    delta.iter().map(|d| d.abs()).sum()
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims<M: Classifier + ?Sized>(model: &M, x: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::Shape {
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("query point contains NaN or infinity".into()));
    }
    Ok(())
}

fn check_target(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::InvalidConfig(format!("target class must be 0 or 1, got {y}")));
    }
    Ok(())
}

/// Gradient descent on the (optionally prototype-augmented) Wachter objective.
///
/// The prototype term `w * |x + d - p|^2` is applied as an exact proximal step,
/// which stays stable for arbitrarily large `w` and is the identity for `w = 0`.
fn descend<M: Classifier + ?Sized>(
    model: &M,
    x_orig: &[f64],
    y_target: u8,
    cfg: &RecourseConfig,
    prototypes: &[&[f64]],
    proto_weight: f64,
    method: CfMethod,
) -> Counterfactual {
    let d = x_orig.len();
    let mut delta = vec![0.0; d];
    if model.predict(x_orig) == y_target {
        return Counterfactual::new(x_orig, delta, y_target, true, method);
    }
    let mut x = x_orig.to_vec();
    let shrink = 1.0 + 2.0 * cfg.step_size * proto_weight;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let (_, mut grad) = model.input_gradient(&x, y_target);
        for (g, dk) in grad.iter_mut().zip(&delta) {
            *g += cfg.c * dk / (dk * dk + cfg.smoothing).sqrt();
        }
        let nearest = prototypes
            .iter()
            .min_by(|a, b| sq_distance(a, &x).total_cmp(&sq_distance(b, &x)));
        let previous = delta.clone();
        for k in 0..d {
            let mut next = delta[k] - cfg.step_size * grad[k];
            if let Some(p) = nearest {
                next = (next + 2.0 * cfg.step_size * proto_weight * (p[k] - x_orig[k])) / shrink;
            }
            delta[k] = next;
            x[k] = x_orig[k] + next;
        }
        if model.predict(&x) == y_target {
            converged = true;
            // The prototype pull is part of the objective, so only plain
            // gradient steps get their overshoot trimmed.
            if proto_weight == 0.0 || prototypes.is_empty() {
                delta = refine_crossing(model, x_orig, y_target, &previous, &delta);
            }
            break;
        }
    }
    Counterfactual::new(x_orig, delta, y_target, converged, method)
}

/// Bisects the last step `[inside, outside]` for the point closest to `inside`
/// that still has the target prediction, so the reported cost does not depend
/// on how far the final fixed-size step overshot the boundary.
fn refine_crossing<M: Classifier + ?Sized>(
    model: &M,
    x_orig: &[f64],
    y_target: u8,
    inside: &[f64],
    outside: &[f64],
) -> Vec<f64> {
    let at = |t: f64| -> Vec<f64> { inside.iter().zip(outside).map(|(a, b)| a + t * (b - a)).collect() };
    let flips = |d: &[f64]| {
        let x: Vec<f64> = x_orig.iter().zip(d).map(|(x, d)| x + d).collect();
        model.predict(&x) == y_target
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..REFINE_STEPS {
        let mid = 0.5 * (lo + hi);
        if flips(&at(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    at(hi)
}

const REFINE_STEPS: usize = 30;

pub fn wachter_counterfactual<M: Classifier + ?Sized>(
    model: &M,
    x_orig: &[f64],
    y_target: u8,
    cfg: &RecourseConfig,
) -> Result<Counterfactual> {
    cfg.validate()?;
    check_dims(model, x_orig)?;
    check_target(y_target)?;
    Ok(descend(model, x_orig, y_target, cfg, &[], 0.0, CfMethod::Wachter))
}

/// Reference samples usable by NUN (model predicts the target) and by the
/// prototype method (labelled with the target), computed once per model.
pub struct CandidatePool<'a> {
    reference: &'a Dataset,
    target: u8,
    predicted_target: Vec<usize>,
    labelled_target: Vec<usize>,
}

impl<'a> CandidatePool<'a> {
    pub fn new<M: Classifier + ?Sized>(reference: &'a Dataset, model: &M, target: u8) -> Result<Self> {
        if reference.dim() != model.input_dim() {
            return Err(Error::Shape {
                expected: model.input_dim(),
                got: reference.dim(),
            });
        }
        let predicted_target = (0..reference.len())
            .filter(|&i| model.predict(reference.row(i)) == target)
            .collect();
        let labelled_target = (0..reference.len())
            .filter(|&i| reference.label(i) == target)
            .collect();
        Ok(Self {
            reference,
            target,
            predicted_target,
            labelled_target,
        })
    }

    fn nearest_unlike(&self, x_orig: &[f64]) -> Result<usize> {
        let ids = self.reference.sample_ids();
        self.predicted_target
            .iter()
            .copied()
            .min_by(|&a, &b| {
                l1_distance(self.reference.row(a), x_orig)
                    .total_cmp(&l1_distance(self.reference.row(b), x_orig))
                    .then(ids[a].cmp(&ids[b]))
            })
            .ok_or_else(|| {
                Error::NoCandidate(format!(
                    "no reference sample is predicted as class {}",
                    self.target
                ))
            })
    }

    fn prototypes(&self, x_orig: &[f64], n: usize) -> Result<Vec<&'a [f64]>> {
        if self.labelled_target.len() < n {
            return Err(Error::NoCandidate(format!(
                "{} prototypes requested but only {} reference samples have label {}",
                n,
                self.labelled_target.len(),
                self.target
            )));
        }
        let ids = self.reference.sample_ids();
        let mut order = self.labelled_target.clone();
        order.sort_by(|&a, &b| {
            sq_distance(self.reference.row(a), x_orig)
                .total_cmp(&sq_distance(self.reference.row(b), x_orig))
                .then(ids[a].cmp(&ids[b]))
        });
        Ok(order[..n].iter().map(|&i| self.reference.row(i)).collect())
    }
}

pub fn nun_counterfactual<M: Classifier + ?Sized>(
    data: &Dataset,
    model: &M,
    x_orig: &[f64],
    y_target: u8,
) -> Result<Counterfactual> {
    check_dims(model, x_orig)?;
    check_target(y_target)?;
    let pool = CandidatePool::new(data, model, y_target)?;
    nun_from_pool(&pool, x_orig)
}

fn nun_from_pool(pool: &CandidatePool<'_>, x_orig: &[f64]) -> Result<Counterfactual> {
    let best = pool.nearest_unlike(x_orig)?;
    let delta = pool
        .reference
        .row(best)
        .iter()
        .zip(x_orig)
        .map(|(c, x)| c - x)
        .collect();
    Ok(Counterfactual::new(x_orig, delta, pool.target, true, CfMethod::Nun))
}

pub fn proto_counterfactual<M: Classifier + ?Sized>(
    data: &Dataset,
    model: &M,
    x_orig: &[f64],
    y_target: u8,
    cfg: &RecourseConfig,
) -> Result<Counterfactual> {
    cfg.validate()?;
    check_dims(model, x_orig)?;
    check_target(y_target)?;
    let pool = CandidatePool::new(data, model, y_target)?;
    proto_from_pool(model, &pool, x_orig, cfg)
}

fn proto_from_pool<M: Classifier + ?Sized>(
    model: &M,
    pool: &CandidatePool<'_>,
    x_orig: &[f64],
    cfg: &RecourseConfig,
) -> Result<Counterfactual> {
    let protos = pool.prototypes(x_orig, cfg.n_prototypes)?;
    Ok(descend(
        model,
        x_orig,
        pool.target,
        cfg,
        &protos,
        cfg.proto_weight,
        CfMethod::Proto,
    ))
}

/// Counterfactual for `x_orig` with the given method; `pool` supplies the
/// reference set for NUN and Proto.
pub fn counterfactual<M: Classifier + ?Sized>(
    method: CfMethod,
    model: &M,
    pool: &CandidatePool<'_>,
    x_orig: &[f64],
    cfg: &RecourseConfig,
) -> Result<Counterfactual> {
    check_dims(model, x_orig)?;
    match method {
        CfMethod::Nun => nun_from_pool(pool, x_orig),
        CfMethod::Proto => proto_from_pool(model, pool, x_orig, cfg),
        CfMethod::Wachter => Ok(descend(model, x_orig, pool.target, cfg, &[], 0.0, CfMethod::Wachter)),
    }
}

/// `|g0(x) - g1(x)|`
pub fn logit_gap<M: Classifier + ?Sized>(model: &M, x: &[f64]) -> f64 {
    let g = model.logits(x);
    (g[0] - g[1]).abs()
}

/// Indices of `data` that the model assigns to the unfavorable class.
pub fn negative_cohort<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Vec<usize> {
    (0..data.len())
        .filter(|&i| model.predict(data.row(i)) != FAVORABLE)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub mean_cost: f64,
    pub cohort_size: usize,
    pub non_converged: usize,
    /// Per-cohort-member cost, in dataset order.
    pub costs: Vec<f64>,
}

fn cohort_costs<M: Classifier + ?Sized>(
    model: &M,
    data: &Dataset,
    cohort: &[usize],
    method: CfMethod,
    cfg: &RecourseConfig,
    reference: &Dataset,
) -> Result<Vec<Counterfactual>> {
    cfg.validate()?;
    let pool = CandidatePool::new(reference, model, FAVORABLE)?;
    cohort
        .par_iter()
        .map(|&i| counterfactual(method, model, &pool, data.row(i), cfg))
        .collect()
}

/// Mean l1 cost of recourse over the samples of `test` predicted unfavorable.
/// `reference` supplies NUN candidates and prototypes (normally the training set).
/// Counterfactuals that did not flip the prediction contribute their best-effort
/// cost and are counted in `non_converged`.
pub fn avg_cost_of_recourse<M: Classifier + ?Sized>(
    model: &M,
    test: &Dataset,
    method: CfMethod,
    cfg: &RecourseConfig,
    reference: &Dataset,
) -> Result<CostSummary> {
    let cohort = negative_cohort(model, test);
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let cfs = cohort_costs(model, test, &cohort, method, cfg, reference)?;
    let costs: Vec<f64> = cfs.iter().map(|c| c.cost).collect();
    Ok(CostSummary {
        mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
        cohort_size: costs.len(),
        non_converged: cfs.iter().filter(|c| !c.converged).count(),
        costs,
    })
}

/// Mean logit gap over the samples of `test` predicted unfavorable.
pub fn avg_cost_proxy<M: Classifier + ?Sized>(model: &M, test: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for x in test.rows() {
        let g = model.logits(x);
        if g[1] <= g[0] {
            sum += (g[0] - g[1]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub gap: f64,
    /// Worst-case cost per protected group `[q = 0, q = 1]`.
    pub max_cost: [f64; 2],
    pub cohort_size: [usize; 2],
    pub non_converged: usize,
}

fn protected_of(test: &Dataset) -> Result<&[u8]> {
    test.protected()
        .ok_or_else(|| Error::InvalidData("dataset has no protected attribute".into()))
}

/// `|max_{q=0} cost - max_{q=1} cost|` over samples predicted unfavorable.
pub fn group_cost_gap<M: Classifier + ?Sized>(
    model: &M,
    test: &Dataset,
    method: CfMethod,
    cfg: &RecourseConfig,
    reference: &Dataset,
) -> Result<GapSummary> {
    let groups = protected_of(test)?;
    let cohort = negative_cohort(model, test);
    let mut sizes = [0usize; 2];
    for &i in &cohort {
        sizes[groups[i] as usize] += 1;
    }
    if let Some(q) = (0..2u8).find(|&q| sizes[q as usize] == 0) {
        return Err(Error::EmptyGroup(q));
    }
    let cfs = cohort_costs(model, test, &cohort, method, cfg, reference)?;
    let mut max_cost = [f64::NEG_INFINITY; 2];
    for (&i, cf) in cohort.iter().zip(&cfs) {
        let m = &mut max_cost[groups[i] as usize];
        *m = m.max(cf.cost);
    }
    Ok(GapSummary {
        gap: (max_cost[0] - max_cost[1]).abs(),
        max_cost,
        cohort_size: sizes,
        non_converged: cfs.iter().filter(|c| !c.converged).count(),
    })
}

/// `|max_{q=0} gap - max_{q=1} gap|` of logit gaps over samples predicted unfavorable.
pub fn group_gap_proxy<M: Classifier + ?Sized>(model: &M, test: &Dataset) -> Result<f64> {
    let groups = protected_of(test)?;
    let mut max_gap = [f64::NEG_INFINITY; 2];
    for (x, &q) in test.rows().zip(groups) {
        let g = model.logits(x);
        if g[1] <= g[0] {
            let m = &mut max_gap[q as usize];
            *m = m.max(g[0] - g[1]);
        }
    }
    if let Some(q) = (0..2u8).find(|&q| max_gap[q as usize] == f64::NEG_INFINITY) {
        return Err(Error::EmptyGroup(q));
    }
    Ok((max_gap[0] - max_gap[1]).abs())
}
