//! Removal experiments.
//!
//! Every fold is standardized with its own training statistics. A fold's
//! training set is scored (influence on the recourse quantity, Data-SHAP, or a
//! random order), the top-ranked samples are removed in increasing fractions,
//! and the classifier is retrained `n_retrain` times per fraction. Each retrain
//! run is evaluated on the untouched test split: recourse quantity per
//! counterfactual method and F1.
//!
//! Retrain seeds depend only on (root seed, fold, run), so the baseline and all
//! strategies share initializations and differences reflect the removed data.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, kfold, remove_samples, standardize, Dataset};
use crate::error::{Error, Result};
use crate::neuralnet::{f1_score, MlpClassifier, TrainConfig};
use crate::recourse::{avg_cost_of_recourse, group_cost_gap, CfMethod, RecourseConfig};
use crate::seeding::{derive_seed, stream_rng};
use crate::valuation::{data_shap_mc, influence_scores, rank_samples, InfluenceScores, SelectionMode, ValueFunction};

pub const MAX_REMOVAL_FRACTION: f64 = 0.3;

const SEED_RETRAIN: u64 = 100;
const SEED_SCORING: u64 = 200;
const SEED_RANDOM: u64 = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    Diabetes {
        path: PathBuf,
    },
    Credit {
        path: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        protected_column: Option<String>,
    },
    /// Dataset handed to the `*_on` entry points directly.
    Provided {
        name: String,
    },
}

impl DatasetSource {
    pub fn diabetes() -> Self {
        DatasetSource::Diabetes {
            path: PathBuf::from("data/diabetes.csv"),
        }
    }

    pub fn credit() -> Self {
        DatasetSource::Credit {
            path: PathBuf::from("data/german_credit.csv"),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DatasetSource::Diabetes { .. } => "diabetes".into(),
            DatasetSource::Credit { .. } => "credit".into(),
            DatasetSource::Csv { path, .. } => format!("csv:{}", path.display()),
            DatasetSource::Provided { name } => name.clone(),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Diabetes { path } => data::load_diabetes(path),
            DatasetSource::Credit { path } => data::load_credit(path),
            DatasetSource::Csv {
                path,
                label_column,
                protected_column,
            } => data::load_csv(path, label_column, protected_column.as_deref()),
            DatasetSource::Provided { name } => Err(Error::InvalidConfig(format!(
                "dataset `{name}` has no file source"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseStudy {
    /// Average cost of recourse over test negatives.
    AvgCost,
    /// Gap between the worst-case recourse costs of the protected groups.
    GroupGap,
}

impl FromStr for CaseStudy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg-cost" => Ok(CaseStudy::AvgCost),
            "group-gap" => Ok(CaseStudy::GroupGap),
            other => Err(Error::InvalidConfig(format!(
                "unknown case study `{other}` (expected avg-cost or group-gap)"
            ))),
        }
    }
}

impl fmt::Display for CaseStudy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseStudy::AvgCost => "avg-cost",
            CaseStudy::GroupGap => "group-gap",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ours,
    DataShap,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ours, Strategy::DataShap, Strategy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ours => "ours",
            Strategy::DataShap => "datashap",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ours" => Ok(Strategy::Ours),
            "datashap" | "data-shap" => Ok(Strategy::DataShap),
            "random" => Ok(Strategy::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy `{other}` (expected ours, datashap or random)"
            ))),
        }
    }
}

/// Parses `a:b:step` (inclusive) or a comma-separated list of fractions.
pub fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| Error::InvalidConfig(format!("bad fraction list `{s}`: {what}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:end:step"));
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad("step must be positive and end >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| ((a + i as f64 * step) * 1e10).round() / 1e10)
            .collect())
    } else {
        s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub case_study: CaseStudy,
    pub cf_methods: Vec<CfMethod>,
    pub removal_fractions: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub n_retrain: usize,
    pub folds: usize,
    pub seed: u64,
    /// Monte-Carlo repetitions for influence scoring.
    pub n_reps: usize,
    pub train: TrainConfig,
    pub recourse: RecourseConfig,
    pub ours_selection: SelectionMode,
    pub datashap_selection: SelectionMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::credit(),
            case_study: CaseStudy::AvgCost,
            cf_methods: CfMethod::ALL.to_vec(),
            removal_fractions: (1..=30).map(|k| k as f64 / 100.0).collect(),
            strategies: Strategy::ALL.to_vec(),
            n_retrain: 5,
            folds: 5,
            seed: 0,
            n_reps: 50,
            train: TrainConfig::default(),
            recourse: RecourseConfig::default(),
            ours_selection: SelectionMode::PositiveTop,
            datashap_selection: SelectionMode::PositiveTop,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.recourse.validate()?;
        let cfg_err = |m: String| Err(Error::InvalidConfig(m));
        if self.cf_methods.is_empty() {
            return cfg_err("at least one counterfactual method is required".into());
        }
        if self.n_retrain == 0 || self.n_reps == 0 || self.train.epochs == 0 {
            return cfg_err("retrain runs, repetitions and epochs must be at least 1".into());
        }
        if self.folds < 2 {
            return cfg_err(format!("need at least 2 folds, got {}", self.folds));
        }
        for w in self.removal_fractions.windows(2) {
            if w[1] <= w[0] {
                return cfg_err("removal fractions must be strictly increasing".into());
            }
        }
        if let Some(f) = self
            .removal_fractions
            .iter()
            .find(|&&f| !(f > 0.0 && f <= MAX_REMOVAL_FRACTION))
        {
            return cfg_err(format!("removal fraction {f} outside (0, {MAX_REMOVAL_FRACTION}]"));
        }
        Ok(())
    }
}

/// Number of samples removed for `fraction` of `n` (rounded up).
pub fn removal_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_removed: usize,
    pub quantity_mean: f64,
    pub quantity_var: f64,
    pub f1_mean: f64,
    pub f1_var: f64,
    pub non_convergence_rate: f64,
    /// Retrain runs with a defined quantity (runs without negatives are dropped).
    pub n_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: CfMethod,
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub methods: Vec<MethodCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub strategies: Vec<StrategyReport>,
}

/// Baseline group gaps of one counterfactual method across folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub method: CfMethod,
    /// Mean baseline gap per fold; `None` where a group had no negatives.
    pub per_fold: Vec<Option<f64>>,
    pub max: f64,
    pub mean: f64,
    pub var: f64,
    pub selected_fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub version: String,
    pub dataset: String,
    pub case_study: CaseStudy,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub timestamp_unix: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub folds: Vec<FoldReport>,
    pub gap_stats: Vec<GapStats>,
}

impl ExperimentReport {
    pub fn empty(cfg: &ExperimentConfig) -> Self {
        Self {
            metadata: ReportMetadata {
                version: crate::VERSION.to_string(),
                dataset: cfg.dataset.name(),
                case_study: cfg.case_study,
                seed: cfg.seed,
                config: cfg.clone(),
                timestamp_unix: None,
            },
            folds: Vec::new(),
            gap_stats: Vec::new(),
        }
    }

    pub fn curve(&self, fold: usize, strategy: Strategy, method: CfMethod) -> Option<&[CurvePoint]> {
        self.folds
            .iter()
            .find(|f| f.fold == fold)?
            .strategies
            .iter()
            .find(|s| s.strategy == strategy)?
            .methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.points.as_slice())
    }

    pub fn gap_stats_for(&self, method: CfMethod) -> Option<&GapStats> {
        self.gap_stats.iter().find(|g| g.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

struct RunResult {
    f1: f64,
    /// Per method: (quantity, non-converged, cohort size), `None` when undefined.
    quantities: Vec<Option<(f64, usize, usize)>>,
}

fn evaluate_run(
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    methods: &[CfMethod],
    seed: u64,
) -> Result<RunResult> {
    let model = MlpClassifier::fit(train, &cfg.train.with_seed(seed))?;
    let f1 = f1_score(test.labels(), &model.predict_dataset(test))?;
    let quantities = methods
        .iter()
        .map(|&method| {
            let r = match cfg.case_study {
                CaseStudy::AvgCost => avg_cost_of_recourse(&model, test, method, &cfg.recourse, train)
                    .map(|s| (s.mean_cost, s.non_converged, s.cohort_size)),
                CaseStudy::GroupGap => group_cost_gap(&model, test, method, &cfg.recourse, train)
                    .map(|s| (s.gap, s.non_converged, s.cohort_size[0] + s.cohort_size[1])),
            };
            match r {
                Ok(v) => Ok(Some(v)),
                Err(e) if e.is_empty_cohort() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult { f1, quantities })
}

/// Retrains `seeds.len()` models on `train` and summarizes each method.
/// `None` for a method where no run produced a defined quantity.
fn retrain_point(
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    methods: &[CfMethod],
    seeds: &[u64],
    fraction: f64,
    n_removed: usize,
) -> Result<Vec<Option<CurvePoint>>> {
    let runs = seeds
        .par_iter()
        .map(|&s| evaluate_run(train, test, cfg, methods, s))
        .collect::<Result<Vec<_>>>()?;
    let (f1_mean, f1_var) = mean_var(&runs.iter().map(|r| r.f1).collect::<Vec<_>>());
    Ok((0..methods.len())
        .map(|m| {
            let defined: Vec<(f64, usize, usize)> = runs.iter().filter_map(|r| r.quantities[m]).collect();
            if defined.is_empty() {
                return None;
            }
            let (quantity_mean, quantity_var) = mean_var(&defined.iter().map(|d| d.0).collect::<Vec<_>>());
            let non_converged: usize = defined.iter().map(|d| d.1).sum();
            let cohort: usize = defined.iter().map(|d| d.2).sum();
            Some(CurvePoint {
                fraction,
                n_removed,
                quantity_mean,
                quantity_var,
                f1_mean,
                f1_var,
                non_convergence_rate: non_converged as f64 / cohort.max(1) as f64,
                n_runs: defined.len(),
            })
        })
        .collect())
}

fn retrain_seeds(cfg: &ExperimentConfig, fold: usize) -> Vec<u64> {
    let base = derive_seed(cfg.seed, SEED_RETRAIN + fold as u64);
    (0..cfg.n_retrain as u64).map(|r| derive_seed(base, r)).collect()
}

fn strategy_scores(
    strategy: Strategy,
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    fold: usize,
) -> Result<InfluenceScores> {
    let scoring = cfg.train.with_seed(derive_seed(cfg.seed, SEED_SCORING + fold as u64));
    match strategy {
        Strategy::Ours => {
            let vf = match cfg.case_study {
                CaseStudy::AvgCost => ValueFunction::avg_recourse_cost_proxy(),
                CaseStudy::GroupGap => ValueFunction::group_gap_proxy(),
            };
            let scores = influence_scores(train, test, &scoring, &vf, cfg.n_reps)?;
            if scores.undefined_steps > 0 {
                info!("fold {fold}: value undefined after {} training steps", scores.undefined_steps);
            }
            Ok(scores)
        }
        Strategy::DataShap => {
            data_shap_mc(train, test, &scoring, &ValueFunction::predictive_performance(), cfg.n_reps)
        }
        Strategy::Random => Err(Error::InvalidConfig("random removal has no scores".into())),
    }
}

fn strategy_ranking(
    strategy: Strategy,
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    fold: usize,
) -> Result<Vec<u64>> {
    match strategy {
        Strategy::Ours => Ok(rank_samples(&strategy_scores(strategy, train, test, cfg, fold)?, cfg.ours_selection)),
        Strategy::DataShap => Ok(rank_samples(
            &strategy_scores(strategy, train, test, cfg, fold)?,
            cfg.datashap_selection,
        )),
        Strategy::Random => {
            let mut ids = train.sample_ids().to_vec();
            ids.shuffle(&mut stream_rng(derive_seed(cfg.seed, SEED_RANDOM + fold as u64), 4));
            Ok(ids)
        }
    }
}

/// Scores of `strategy` on one fold, exactly as the removal experiments
/// compute them. The value function follows `cfg.case_study`.
pub fn score_fold(data: &Dataset, cfg: &ExperimentConfig, fold: usize, strategy: Strategy) -> Result<InfluenceScores> {
    cfg.validate()?;
    if fold >= cfg.folds {
        return Err(Error::InvalidConfig(format!("fold {fold} out of range for {} folds", cfg.folds)));
    }
    let prepared = prepare_folds(data, cfg)?;
    let p = prepared
        .iter()
        .find(|p| p.fold == fold)
        .expect("kfold yields every index");
    strategy_scores(strategy, &p.train, &p.test, cfg, fold)
}

/// Removal curves of one fold for the given methods, starting from a known baseline.
fn removal_curves(
    fold: usize,
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    methods: &[CfMethod],
    baseline: &[CurvePoint],
) -> Result<FoldReport> {
    let seeds = retrain_seeds(cfg, fold);
    let n = train.len();
    let strategies = cfg
        .strategies
        .iter()
        .map(|&strategy| {
            let ranking = strategy_ranking(strategy, train, test, cfg, fold)?;
            let mut curves: Vec<Vec<CurvePoint>> = baseline.iter().map(|b| vec![b.clone()]).collect();
            let mut by_count: HashMap<usize, Vec<Option<CurvePoint>>> = HashMap::new();
            for &fraction in &cfg.removal_fractions {
                let count = removal_count(fraction, n);
                if count + 2 > n {
                    warn!("fold {fold}, {strategy}: removing {count} of {n} samples leaves too few; curve truncated");
                    break;
                }
                let reduced = remove_samples(train, &ranking[..count])?;
                let (neg, pos) = reduced.class_counts();
                if neg == 0 || pos == 0 {
                    warn!("fold {fold}, {strategy}: removing {count} samples empties a class; curve truncated");
                    break;
                }
                if !by_count.contains_key(&count) {
                    let points = retrain_point(&reduced, test, cfg, methods, &seeds, fraction, count)?;
                    by_count.insert(count, points);
                }
                for (curve, point) in curves.iter_mut().zip(&by_count[&count]) {
                    match point {
                        Some(p) => curve.push(CurvePoint { fraction, ..p.clone() }),
                        None => warn!("fold {fold}, {strategy}, fraction {fraction}: quantity undefined in every run"),
                    }
                }
            }
            Ok(StrategyReport {
                strategy,
                methods: methods
                    .iter()
                    .zip(curves)
                    .map(|(&method, points)| MethodCurve { method, points })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldReport {
        fold,
        n_train: train.len(),
        n_test: test.len(),
        strategies,
    })
}

struct PreparedFold {
    fold: usize,
    train: Dataset,
    test: Dataset,
}

fn prepare_folds(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<PreparedFold>> {
    kfold(data, cfg.folds, cfg.seed)?
        .into_iter()
        .map(|split| {
            let (train, others, _) = standardize(&split.train, std::slice::from_ref(&split.test))?;
            let test = others.into_iter().next().expect("one test split");
            Ok(PreparedFold {
                fold: split.fold_index,
                train,
                test,
            })
        })
        .collect()
}

fn baseline_points(p: &PreparedFold, cfg: &ExperimentConfig) -> Result<Vec<Option<CurvePoint>>> {
    retrain_point(&p.train, &p.test, cfg, &cfg.cf_methods, &retrain_seeds(cfg, p.fold), 0.0, 0)
}

fn check_case(cfg: &ExperimentConfig, expected: CaseStudy) -> Result<()> {
    cfg.validate()?;
    if cfg.case_study != expected {
        return Err(Error::InvalidConfig(format!(
            "configuration is for case study {}, expected {expected}",
            cfg.case_study
        )));
    }
    Ok(())
}

pub fn run_case_study_1(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    check_case(cfg, CaseStudy::AvgCost)?;
    run_case_study_1_on(&cfg.dataset.load()?, cfg)
}

/// Average-cost removal experiment on every fold of `data`.
pub fn run_case_study_1_on(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    check_case(cfg, CaseStudy::AvgCost)?;
    let prepared = prepare_folds(data, cfg)?;
    let folds = prepared
        .par_iter()
        .map(|p| {
            let baseline = baseline_points(p, cfg)?;
            if baseline.iter().any(Option::is_none) {
                warn!("fold {}: no negatively classified test samples; fold skipped", p.fold);
                return Ok(None);
            }
            let baseline: Vec<CurvePoint> = baseline.into_iter().flatten().collect();
            removal_curves(p.fold, &p.train, &p.test, cfg, &cfg.cf_methods, &baseline).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::empty(cfg);
    report.folds = folds.into_iter().flatten().collect();
    Ok(report)
}

/// Baseline group gaps of every method on every fold, with the worst fold per method.
pub fn group_gap_baselines(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<GapStats>> {
    Ok(gap_baselines(&prepare_folds(data, cfg)?, cfg)?.0)
}

type FoldBaselines = Vec<Vec<Option<CurvePoint>>>;

fn gap_baselines(prepared: &[PreparedFold], cfg: &ExperimentConfig) -> Result<(Vec<GapStats>, FoldBaselines)> {
    if prepared.iter().any(|p| p.train.protected().is_none()) {
        return Err(Error::InvalidData("group gap needs a protected attribute".into()));
    }
    let cfg = &ExperimentConfig {
        case_study: CaseStudy::GroupGap,
        ..cfg.clone()
    };
    let baselines = prepared
        .par_iter()
        .map(|p| baseline_points(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let stats = cfg
        .cf_methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let per_fold: Vec<Option<f64>> = baselines.iter().map(|b| b[m].as_ref().map(|p| p.quantity_mean)).collect();
            let defined: Vec<f64> = per_fold.iter().flatten().copied().collect();
            let (mean, var) = mean_var(&defined);
            let selected = per_fold
                .iter()
                .enumerate()
                .filter_map(|(f, g)| g.map(|g| (f, g)))
                .fold(None, |best: Option<(usize, f64)>, (f, g)| match best {
                    Some((_, bg)) if bg >= g => best,
                    _ => Some((f, g)),
                });
            if selected.is_none() {
                warn!("{method}: every fold has a protected group without negatives");
            }
            GapStats {
                method,
                max: selected.map_or(f64::NAN, |s| s.1),
                mean,
                var,
                selected_fold: selected.map(|s| prepared[s.0].fold),
                per_fold,
            }
        })
        .collect();
    Ok((stats, baselines))
}

pub fn run_case_study_2(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    check_case(cfg, CaseStudy::GroupGap)?;
    run_case_study_2_on(&cfg.dataset.load()?, cfg)
}

/// Group-gap removal experiment. Each method is run on the fold where its
/// baseline gap is largest.
pub fn run_case_study_2_on(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    check_case(cfg, CaseStudy::GroupGap)?;
    let prepared = prepare_folds(data, cfg)?;
    let (gap_stats, baselines) = gap_baselines(&prepared, cfg)?;
    let mut selected: Vec<usize> = gap_stats.iter().filter_map(|g| g.selected_fold).collect();
    selected.sort_unstable();
    selected.dedup();
    let folds = selected
        .par_iter()
        .map(|&fold| {
            let pos = prepared.iter().position(|p| p.fold == fold).expect("selected fold exists");
            let p = &prepared[pos];
            let (methods, baseline): (Vec<CfMethod>, Vec<CurvePoint>) = gap_stats
                .iter()
                .zip(&baselines[pos])
                .filter(|(g, _)| g.selected_fold == Some(fold))
                .map(|(g, b)| (g.method, b.clone().expect("selected folds have a defined baseline")))
                .unzip();
            removal_curves(fold, &p.train, &p.test, cfg, &methods, &baseline)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::empty(cfg);
    report.folds = folds;
    report.gap_stats = gap_stats;
    Ok(report)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.case_study {
        CaseStudy::AvgCost => run_case_study_1(cfg),
        CaseStudy::GroupGap => run_case_study_2(cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

pub const REPORT_CSV_HEADER: [&str; 12] = [
    "case_study",
    "fold",
    "strategy",
    "method",
    "fraction",
    "n_removed",
    "quantity_mean",
    "quantity_var",
    "f1_mean",
    "f1_var",
    "non_convergence_rate",
    "n_runs",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_metadata(out: &mut impl Write, report: &ExperimentReport, path: &Path) -> Result<()> {
    let m = &report.metadata;
    let config = serde_json::to_string(&m.config)?;
    let mut lines = vec![
        format!("# version={}", m.version),
        format!("# dataset={}", m.dataset),
        format!("# case_study={}", m.case_study),
        format!("# seed={}", m.seed),
        format!("# config={config}"),
    ];
    if let Some(t) = m.timestamp_unix {
        lines.push(format!("# timestamp_unix={t}"));
    }
    for l in lines {
        writeln!(out, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn emit_report(report: &ExperimentReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out).map_err(|e| Error::io(path, e))?;
        }
        ReportFormat::Csv => {
            write_metadata(&mut out, report, path)?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(REPORT_CSV_HEADER).map_err(|e| csv_error(path, e))?;
            for f in &report.folds {
                for s in &f.strategies {
                    for m in &s.methods {
                        for p in &m.points {
                            w.write_record([
                                report.metadata.case_study.to_string(),
                                f.fold.to_string(),
                                s.strategy.to_string(),
                                m.method.to_string(),
                                p.fraction.to_string(),
                                p.n_removed.to_string(),
                                p.quantity_mean.to_string(),
                                p.quantity_var.to_string(),
                                p.f1_mean.to_string(),
                                p.f1_var.to_string(),
                                p.non_convergence_rate.to_string(),
                                p.n_runs.to_string(),
                            ])
                            .map_err(|e| csv_error(path, e))?;
                        }
                    }
                }
            }
            out = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Fold-pooled curve of one (strategy, method) at one fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledPoint {
    pub strategy: Strategy,
    pub method: CfMethod,
    pub fraction: f64,
    pub n_folds: usize,
    pub quantity_mean: f64,
    pub quantity_var: f64,
    pub f1_mean: f64,
    pub f1_var: f64,
}

/// Pools curves over folds: means of fold means, variances by the law of
/// total variance. Every curve must start with its baseline point.
pub fn pooled_curves(report: &ExperimentReport) -> Result<Vec<PooledPoint>> {
    let mut keys: Vec<(Strategy, CfMethod, u64)> = Vec::new();
    let mut cells: HashMap<(Strategy, CfMethod, u64), Vec<&CurvePoint>> = HashMap::new();
    let mut any = false;
    for f in &report.folds {
        for s in &f.strategies {
            for m in &s.methods {
                any = true;
                if m.points.first().map(|p| p.fraction) != Some(0.0) {
                    return Err(Error::Integrity(format!(
                        "fold {}, {}, {}: baseline row missing",
                        f.fold, s.strategy, m.method
                    )));
                }
                for p in &m.points {
                    let key = (s.strategy, m.method, p.fraction.to_bits());
                    cells
                        .entry(key)
                        .or_insert_with(|| {
                            keys.push(key);
                            Vec::new()
                        })
                        .push(p);
                }
            }
        }
    }
    if !any {
        return Err(Error::Integrity("report contains no curves".into()));
    }
    Ok(keys
        .into_iter()
        .map(|key| {
            let ps = &cells[&key];
            let pool = |mean: fn(&CurvePoint) -> f64, var: fn(&CurvePoint) -> f64| {
                let (m, between) = mean_var(&ps.iter().map(|p| mean(p)).collect::<Vec<_>>());
                let within = ps.iter().map(|p| var(p)).sum::<f64>() / ps.len() as f64;
                (m, within + between)
            };
            let (quantity_mean, quantity_var) = pool(|p| p.quantity_mean, |p| p.quantity_var);
            let (f1_mean, f1_var) = pool(|p| p.f1_mean, |p| p.f1_var);
            PooledPoint {
                strategy: key.0,
                method: key.1,
                fraction: f64::from_bits(key.2),
                n_folds: ps.len(),
                quantity_mean,
                quantity_var,
                f1_mean,
                f1_var,
            }
        })
        .collect())
}

/// Plot-ready CSV: one row per (strategy, method, fraction), fraction 0 first.
pub fn emit_curve_data(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pooled = pooled_curves(report)?;
    let mut out = create(path)?;
    write_metadata(&mut out, report, path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "method",
        "fraction",
        "n_folds",
        "quantity_mean",
        "quantity_var",
        "f1_mean",
        "f1_var",
    ])
    .map_err(|e| csv_error(path, e))?;
    for p in pooled {
        w.write_record([
            p.strategy.to_string(),
            p.method.to_string(),
            p.fraction.to_string(),
            p.n_folds.to_string(),
            p.quantity_mean.to_string(),
            p.quantity_var.to_string(),
            p.f1_mean.to_string(),
            p.f1_var.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    let mut out = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    out.flush().map_err(|e| Error::io(path, e))
}
