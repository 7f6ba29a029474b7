//! Training-sample valuation.
//!
//! [`permutation_scores`] is the shared Monte-Carlo engine: for each repetition
//! the learner is re-initialized, then for every epoch the samples are visited in
//! a fresh random order; after each single-sample update the value function is
//! re-evaluated and the change is credited to that sample. Final scores are the
//! mean credit per (repetition, epoch).
//!
//! [`influence_scores`] runs the engine on an [`MlpClassifier`] with an
//! explanation-derived value function, [`data_shap_mc`] with predictive
//! performance. [`shapley_exact`] enumerates all coalitions and serves as an
//! oracle for small games.
//!
//! Value function outputs are snapped to a dyadic grid of `2^-32` before
//! differencing. Differences and partial sums of grid values are exact in `f64`
//! (for `|V| < 2^20`), so the credits of one epoch sum to exactly
//! `V(end) - V(start)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neuralnet::{accuracy, MlpClassifier, TrainConfig};
use crate::recourse::{avg_cost_proxy, group_gap_proxy};
use crate::seeding::{derive_seed, stream_rng};

pub const SHAPLEY_EXACT_MAX_PLAYERS: usize = 12;
const VALUE_GRID: f64 = 4_294_967_296.0; // 2^32

#[inline]
fn snap(v: f64) -> f64 {
    (v * VALUE_GRID).round() / VALUE_GRID
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    PredictivePerformance,
    AvgRecourseCostProxy,
    GroupGapProxy,
    Custom,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::PredictivePerformance => "predictive-performance",
            ValueKind::AvgRecourseCostProxy => "avg-recourse-cost-proxy",
            ValueKind::GroupGapProxy => "group-gap-proxy",
            ValueKind::Custom => "custom",
        })
    }
}

type EvalFn = dyn Fn(&MlpClassifier, &Dataset) -> Result<f64> + Send + Sync;

/// Scalar quantity of interest of a (possibly partially trained) model on an
/// evaluation set. Returning [`Error::EmptyCohort`] / [`Error::EmptyGroup`]
/// means "undefined for this model" rather than failure.
#[derive(Clone)]
pub struct ValueFunction {
    kind: ValueKind,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for ValueFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueFunction").field("kind", &self.kind).finish()
    }
}

impl ValueFunction {
    /// Classification accuracy on the evaluation set.
    pub fn predictive_performance() -> Self {
        Self {
            kind: ValueKind::PredictivePerformance,
            eval: Arc::new(|m, d| accuracy(d.labels(), &m.predict_dataset(d))),
        }
    }

    /// Mean logit gap over evaluation samples predicted unfavorable.
    pub fn avg_recourse_cost_proxy() -> Self {
        Self {
            kind: ValueKind::AvgRecourseCostProxy,
            eval: Arc::new(|m, d| avg_cost_proxy(m, d)),
        }
    }

    /// Gap between the per-group worst-case logit gaps.
    pub fn group_gap_proxy() -> Self {
        Self {
            kind: ValueKind::GroupGapProxy,
            eval: Arc::new(|m, d| group_gap_proxy(m, d)),
        }
    }

    pub fn custom(f: impl Fn(&MlpClassifier, &Dataset) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self {
            kind: ValueKind::Custom,
            eval: Arc::new(f),
        }
    }

    pub fn from_kind(kind: ValueKind) -> Result<Self> {
        match kind {
            ValueKind::PredictivePerformance => Ok(Self::predictive_performance()),
            ValueKind::AvgRecourseCostProxy => Ok(Self::avg_recourse_cost_proxy()),
            ValueKind::GroupGapProxy => Ok(Self::group_gap_proxy()),
            ValueKind::Custom => Err(Error::InvalidConfig(
                "custom value functions must be built with ValueFunction::custom".into(),
            )),
        }
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn evaluate(&self, model: &MlpClassifier, data: &Dataset) -> Result<f64> {
        (self.eval)(model, data)
    }
}

/// Model trained one sample at a time; the unit of work of the Monte-Carlo engine.
pub trait IncrementalLearner: Sync {
    type State: Send;

    fn n_samples(&self) -> usize;
    fn init(&self, seed: u64) -> Result<Self::State>;
    fn step(&self, state: &mut Self::State, sample: usize) -> Result<()>;
}

/// Per-sample SGD on an [`MlpClassifier`].
pub struct MlpLearner<'a> {
    pub train: &'a Dataset,
    pub cfg: &'a TrainConfig,
}

impl IncrementalLearner for MlpLearner<'_> {
    type State = MlpClassifier;

    fn n_samples(&self) -> usize {
        self.train.len()
    }

    fn init(&self, seed: u64) -> Result<MlpClassifier> {
        MlpClassifier::from_config(self.train.dim(), &self.cfg.with_seed(seed))
    }

    fn step(&self, model: &mut MlpClassifier, sample: usize) -> Result<()> {
        model
            .sgd_step(self.train.row(sample), self.train.label(sample), self.cfg.learning_rate)
            .map(|_| ())
    }
}

/// Book-keeping for one pass over the data: the credits handed out during the
/// epoch sum exactly to `end_value - start_value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub repetition: usize,
    pub epoch: usize,
    /// First defined value of the epoch (`None` if the value was undefined throughout).
    pub start_value: Option<f64>,
    pub end_value: Option<f64>,
    pub credit_sum: f64,
}

impl EpochTrace {
    pub fn telescopes(&self) -> bool {
        match (self.start_value, self.end_value) {
            (Some(s), Some(e)) => self.credit_sum == e - s,
            _ => self.credit_sum == 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScores {
    pub sample_ids: Vec<u64>,
    pub phi: Vec<f64>,
    pub visits: Vec<u64>,
    pub n_repetitions: usize,
    pub k_epochs: usize,
    pub seed: u64,
    pub value_kind: ValueKind,
    /// `history[j][i]`: mean credit of sample `i` within repetition `j`.
    pub history: Vec<Vec<f64>>,
    pub epoch_traces: Vec<EpochTrace>,
    /// Steps after which the value function was undefined (credited 0).
    pub undefined_steps: u64,
}

impl InfluenceScores {
    /// Builds scores from per-repetition mean credits, e.g. for diagnostics tests.
    pub fn from_history(sample_ids: Vec<u64>, history: Vec<Vec<f64>>, k_epochs: usize) -> Result<Self> {
        let n = sample_ids.len();
        if history.iter().any(|h| h.len() != n) {
            return Err(Error::InvalidData("history rows must match the sample count".into()));
        }
        let reps = history.len();
        let mut phi = vec![0.0; n];
        for h in &history {
            for (p, v) in phi.iter_mut().zip(h) {
                *p += v;
            }
        }
        if reps > 0 {
            phi.iter_mut().for_each(|p| *p /= reps as f64);
        }
        Ok(Self {
            visits: vec![(reps * k_epochs) as u64; n],
            sample_ids,
            phi,
            n_repetitions: reps,
            k_epochs,
            seed: 0,
            value_kind: ValueKind::Custom,
            history,
            epoch_traces: Vec::new(),
            undefined_steps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn as_map(&self) -> BTreeMap<u64, f64> {
        self.sample_ids.iter().copied().zip(self.phi.iter().copied()).collect()
    }

    pub fn phi_of(&self, id: u64) -> Option<f64> {
        self.sample_ids.iter().position(|&s| s == id).map(|i| self.phi[i])
    }

    /// Standard error of each score across repetitions (0 with fewer than two).
    pub fn std_errors(&self) -> Vec<f64> {
        let n = self.history.len();
        if n < 2 {
            return vec![0.0; self.len()];
        }
        (0..self.len())
            .map(|i| {
                let mean = self.history.iter().map(|h| h[i]).sum::<f64>() / n as f64;
                let var = self.history.iter().map(|h| (h[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            })
            .collect()
    }

    pub fn all_epochs_telescope(&self) -> bool {
        self.epoch_traces.iter().all(EpochTrace::telescopes)
    }

    pub fn to_document(&self) -> ScoresDocument {
        ScoresDocument {
            metadata: ScoresMetadata {
                n_repetitions: self.n_repetitions,
                k_epochs: self.k_epochs,
                seed: self.seed,
                value_kind: self.value_kind,
                undefined_steps: self.undefined_steps,
                version: crate::VERSION.to_string(),
            },
            scores: self
                .sample_ids
                .iter()
                .zip(&self.phi)
                .zip(&self.visits)
                .map(|((&sample_id, &phi), &visits)| ScoreRecord {
                    sample_id,
                    phi,
                    visits,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }
}

/// On-disk form of [`InfluenceScores`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresDocument {
    pub metadata: ScoresMetadata,
    pub scores: Vec<ScoreRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresMetadata {
    pub n_repetitions: usize,
    pub k_epochs: usize,
    pub seed: u64,
    pub value_kind: ValueKind,
    pub undefined_steps: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: u64,
    pub phi: f64,
    pub visits: u64,
}

struct RepetitionOutcome {
    credits: Vec<f64>,
    traces: Vec<EpochTrace>,
    undefined_steps: u64,
}

fn defined(v: Result<f64>) -> Result<Option<f64>> {
    match v {
        Ok(x) if x.is_finite() => Ok(Some(snap(x))),
        Ok(x) => Err(Error::Numeric(format!("value function returned {x}"))),
        Err(e) if e.is_empty_cohort() => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_repetition<L, V>(learner: &L, value: &V, repetition: usize, epochs: usize, seed: u64) -> Result<RepetitionOutcome>
where
    L: IncrementalLearner,
    V: Fn(&L::State) -> Result<f64> + Sync,
{
    let n = learner.n_samples();
    let rep_seed = derive_seed(seed, repetition as u64);
    let mut state = learner.init(rep_seed)?;
    let mut rng = stream_rng(rep_seed, 3);
    let mut order: Vec<usize> = (0..n).collect();
    let mut credits = vec![0.0; n];
    let mut traces = Vec::with_capacity(epochs);
    let mut undefined_steps = 0;
    for epoch in 0..epochs {
        let mut current = defined(value(&state))?;
        let mut start = current;
        let mut credit_sum = 0.0;
        order.shuffle(&mut rng);
        for &i in &order {
            learner.step(&mut state, i)?;
            let next = defined(value(&state))?;
            let credit = match (current, next) {
                (Some(before), Some(after)) => after - before,
                _ => 0.0,
            };
            if next.is_none() {
                undefined_steps += 1;
            } else {
                current = next;
                start = start.or(next);
            }
            credits[i] += credit;
            credit_sum += credit;
        }
        traces.push(EpochTrace {
            repetition,
            epoch,
            start_value: start,
            end_value: current,
            credit_sum,
        });
    }
    Ok(RepetitionOutcome {
        credits,
        traces,
        undefined_steps,
    })
}

fn merge(
    ids: &[u64],
    outcomes: Vec<RepetitionOutcome>,
    epochs: usize,
    seed: u64,
    kind: ValueKind,
) -> InfluenceScores {
    let n = ids.len();
    let reps = outcomes.len();
    let mut totals = vec![0.0; n];
    let mut history = Vec::with_capacity(reps);
    let mut epoch_traces = Vec::with_capacity(reps * epochs);
    let mut undefined_steps = 0;
    for o in outcomes {
        for (t, c) in totals.iter_mut().zip(&o.credits) {
            *t += c;
        }
        history.push(o.credits.iter().map(|c| c / epochs as f64).collect());
        epoch_traces.extend(o.traces);
        undefined_steps += o.undefined_steps;
    }
    let denom = (reps * epochs) as f64;
    InfluenceScores {
        sample_ids: ids.to_vec(),
        phi: totals.iter().map(|t| t / denom).collect(),
        visits: vec![(reps * epochs) as u64; n],
        n_repetitions: reps,
        k_epochs: epochs,
        seed,
        value_kind: kind,
        history,
        epoch_traces,
        undefined_steps,
    }
}

/// Monte-Carlo permutation scoring of every sample of `learner`.
///
/// Repetitions use seeds derived from `seed` and the repetition index and run in
/// parallel; results are merged in repetition order, so the output is a pure
/// function of the arguments.
pub fn permutation_scores<L, V>(
    learner: &L,
    sample_ids: &[u64],
    value: V,
    kind: ValueKind,
    n_reps: usize,
    epochs: usize,
    seed: u64,
) -> Result<InfluenceScores>
where
    L: IncrementalLearner,
    V: Fn(&L::State) -> Result<f64> + Sync,
{
    if n_reps == 0 || epochs == 0 {
        return Err(Error::InvalidConfig(format!(
            "need at least one repetition and one epoch (got {n_reps}, {epochs})"
        )));
    }
    if sample_ids.len() != learner.n_samples() {
        return Err(Error::Shape {
            expected: learner.n_samples(),
            got: sample_ids.len(),
        });
    }
    if sample_ids.is_empty() {
        return Err(Error::InvalidData("no samples to score".into()));
    }
    let outcomes = (0..n_reps)
        .into_par_iter()
        .map(|j| run_repetition(learner, &value, j, epochs, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(sample_ids, outcomes, epochs, seed, kind))
}

/// Influence of each training sample on `vf(model, test)`, estimated while
/// training `n_reps` freshly initialized networks for `cfg.epochs` epochs each.
pub fn influence_scores(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    vf: &ValueFunction,
    n_reps: usize,
) -> Result<InfluenceScores> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::InvalidData("evaluation set is empty".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::Shape {
            expected: train.dim(),
            got: test.dim(),
        });
    }
    let learner = MlpLearner { train, cfg };
    permutation_scores(
        &learner,
        train.sample_ids(),
        |m: &MlpClassifier| vf.evaluate(m, test),
        vf.kind(),
        n_reps,
        cfg.epochs,
        cfg.seed,
    )
}

/// Gradient-step Data-SHAP. The baseline scores predictive performance
/// ([`ValueFunction::predictive_performance`]); any value function is accepted
/// and the estimator is the same as [`influence_scores`].
pub fn data_shap_mc(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    vf: &ValueFunction,
    n_reps: usize,
) -> Result<InfluenceScores> {
    influence_scores(train, test, cfg, vf, n_reps)
}

/// Exact Shapley values by enumerating all `2^n` coalitions.
///
/// `value_of_subset` receives the coalition members in the order of `ids`.
pub fn shapley_exact<F>(ids: &[u64], value_of_subset: F) -> Result<BTreeMap<u64, f64>>
where
    F: Fn(&[u64]) -> f64,
{
    let n = ids.len();
    if n > SHAPLEY_EXACT_MAX_PLAYERS {
        return Err(Error::OracleTooLarge {
            max: SHAPLEY_EXACT_MAX_PLAYERS,
            got: n,
        });
    }
    let mut members = Vec::with_capacity(n);
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            members.clear();
            members.extend((0..n).filter(|k| mask >> k & 1 == 1).map(|k| ids[k]));
            value_of_subset(&members)
        })
        .collect();
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n)
        .map(|s| fact[s] * fact[n - s - 1] / fact[n])
        .collect();
    let mut phi = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..1usize << n).filter(|m| m & bit == 0) {
            acc += weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
        }
        phi.insert(id, acc);
    }
    Ok(phi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Largest `|phi|` first.
    AbsoluteTop,
    /// Largest `phi` first, positive scores only.
    #[default]
    PositiveTop,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "absolute-top" | "absolute" | "abs" => Ok(SelectionMode::AbsoluteTop),
            "positive-top" | "positive" | "pos" => Ok(SelectionMode::PositiveTop),
            other => Err(Error::InvalidConfig(format!("unknown selection mode `{other}`"))),
        }
    }
}

/// All sample ids ordered by decreasing relevance under `mode` (ties by id).
/// Unlike [`select_influential`], `PositiveTop` keeps non-positive scores at
/// the tail instead of dropping them.
pub fn rank_samples(scores: &InfluenceScores, mode: SelectionMode) -> Vec<u64> {
    let key = |p: f64| match mode {
        SelectionMode::AbsoluteTop => p.abs(),
        SelectionMode::PositiveTop => p,
    };
    let mut order: Vec<(u64, f64)> = scores
        .sample_ids
        .iter()
        .copied()
        .zip(scores.phi.iter().map(|&p| key(p)))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(id, _)| id).collect()
}

/// Most influential samples, either the top `k` or all above `threshold`.
pub fn select_influential(
    scores: &InfluenceScores,
    k: Option<usize>,
    threshold: Option<f64>,
    mode: SelectionMode,
) -> Result<Vec<u64>> {
    let phi = scores.as_map();
    let relevance = |id: &u64| match mode {
        SelectionMode::AbsoluteTop => phi[id].abs(),
        SelectionMode::PositiveTop => phi[id],
    };
    let ranked = rank_samples(scores, mode)
        .into_iter()
        .filter(|id| mode == SelectionMode::AbsoluteTop || phi[id] > 0.0);
    match (k, threshold) {
        (Some(k), None) => {
            if k > scores.len() {
                return Err(Error::InvalidConfig(format!(
                    "cannot select {k} of {} samples",
                    scores.len()
                )));
            }
            Ok(ranked.take(k).collect())
        }
        (None, Some(t)) => Ok(ranked.filter(|id| relevance(id) >= t).collect()),
        _ => Err(Error::InvalidConfig(
            "exactly one of k and threshold must be given".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `max_i |mean_first_half_i - mean_i| / (|mean_i| + 1e-9)`
    pub stability_ratio: f64,
    pub converged: bool,
    pub worst_sample: Option<u64>,
    pub n_repetitions: usize,
}

pub const DEFAULT_STABILITY_RATIO: f64 = 0.1;

/// Compares the running mean after the first half of the repetitions with the
/// final mean, per sample. Fewer than two repetitions never count as converged.
pub fn convergence_diagnostics(scores: &InfluenceScores, max_ratio: f64) -> ConvergenceReport {
    let reps = scores.history.len();
    if reps < 2 || scores.is_empty() {
        return ConvergenceReport {
            stability_ratio: f64::INFINITY,
            converged: false,
            worst_sample: None,
            n_repetitions: reps,
        };
    }
    let half = reps / 2;
    // Means are taken relative to the first repetition so constant sequences are exact.
    let mean = |rows: &[Vec<f64>], i: usize| {
        let shift = scores.history[0][i];
        shift + rows.iter().map(|h| h[i] - shift).sum::<f64>() / rows.len() as f64
    };
    let mut worst = (f64::NEG_INFINITY, None);
    for (i, &id) in scores.sample_ids.iter().enumerate() {
        let overall = mean(&scores.history, i);
        let first = mean(&scores.history[..half], i);
        let ratio = (first - overall).abs() / (overall.abs() + 1e-9);
        if ratio > worst.0 {
            worst = (ratio, Some(id));
        }
    }
    ConvergenceReport {
        stability_ratio: worst.0,
        converged: worst.0 < max_ratio,
        worst_sample: worst.1,
        n_repetitions: reps,
    }
}
