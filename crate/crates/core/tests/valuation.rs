use std::collections::BTreeMap;

use cfinfluence::recourse::avg_cost_proxy;
use cfinfluence::seeding::derive_seed;
use cfinfluence::synthetic::gaussian_blobs;
use cfinfluence::valuation::{
    convergence_diagnostics, data_shap_mc, influence_scores, select_influential, shapley_exact, InfluenceScores,
    DEFAULT_STABILITY_RATIO,
};
use cfinfluence::{Dataset, MlpClassifier, SelectionMode, TrainConfig, ValueFunction};

fn constant() -> ValueFunction {
    ValueFunction::custom(|_, _| Ok(0.25))
}

fn split(data: &Dataset, n_train: usize) -> (Dataset, Dataset) {
    let idx: Vec<usize> = (0..data.len()).collect();
    (data.subset(&idx[..n_train]), data.subset(&idx[n_train..]))
}

#[test]
fn constant_value_gives_zero_scores() {
    let (train, test) = split(&gaussian_blobs(10, 2, 2.0, 1.0, 1).unwrap(), 14);
    let cfg = TrainConfig::default();
    let s = influence_scores(&train, &test, &cfg, &constant(), 20).unwrap();
    assert!(s.phi.iter().all(|&p| p == 0.0));
    let d = data_shap_mc(&train, &test, &cfg, &constant(), 20).unwrap();
    for (p, se) in d.phi.iter().zip(d.std_errors()) {
        assert!(p.abs() <= 3.0 * se);
    }
}

fn with_duplicate(data: &Dataset, row: usize) -> Dataset {
    let mut rows: Vec<Vec<f64>> = data.rows().map(<[f64]>::to_vec).collect();
    let mut labels = data.labels().to_vec();
    rows.push(rows[row].clone());
    labels.push(labels[row]);
    Dataset::from_rows(rows, labels, None).unwrap()
}

#[test]
fn duplicated_samples_score_alike() {
    let (train, test) = split(&gaussian_blobs(12, 2, 1.5, 1.0, 2).unwrap(), 16);
    let train = with_duplicate(&train, 3);
    let (a, b) = (3, train.len() - 1);
    let cfg = TrainConfig::default();
    for vf in [ValueFunction::avg_recourse_cost_proxy(), ValueFunction::predictive_performance()] {
        let s = influence_scores(&train, &test, &cfg, &vf, 200).unwrap();
        let se = s.std_errors();
        let pooled = (se[a].powi(2) + se[b].powi(2)).sqrt();
        assert!(
            (s.phi[a] - s.phi[b]).abs() < 3.0 * pooled,
            "{}: {} vs {} (se {pooled})",
            vf.kind(),
            s.phi[a],
            s.phi[b]
        );
    }
}

/// Exact Shapley values of the per-step game (every member steps once from the
/// repetition's initial weights), averaged over the repetitions' initial weights.
fn per_step_exact(train: &Dataset, test: &Dataset, cfg: &TrainConfig, vf: &ValueFunction, n_reps: usize) -> BTreeMap<u64, f64> {
    let ids = train.sample_ids().to_vec();
    let mut total: BTreeMap<u64, f64> = ids.iter().map(|&i| (i, 0.0)).collect();
    for j in 0..n_reps as u64 {
        let init = MlpClassifier::from_config(train.dim(), &cfg.with_seed(derive_seed(cfg.seed, j))).unwrap();
        let grads: Vec<_> = (0..train.len())
            .map(|i| init.loss_and_gradient(train.row(i), train.label(i)).unwrap().1)
            .collect();
        let phi = shapley_exact(&ids, |s| {
            let mut m = init.clone();
            for &id in s {
                m.apply_gradient(&grads[id as usize], cfg.learning_rate).unwrap();
            }
            vf.evaluate(&m, test).unwrap()
        })
        .unwrap();
        for (id, v) in phi {
            *total.get_mut(&id).unwrap() += v / n_reps as f64;
        }
    }
    total
}

#[test]
fn monte_carlo_top_sample_within_five_percent_of_exact() {
    let train = Dataset::from_rows(
        vec![
            vec![2.0, 2.0],
            vec![1.0, 0.5],
            vec![-1.5, -1.0],
            vec![-0.5, -2.0],
            vec![0.5, -0.5],
            vec![1.5, 1.5],
        ],
        vec![1, 1, 0, 0, 0, 0],
        None,
    )
    .unwrap();
    let test = Dataset::from_rows(vec![vec![2.0, 1.5], vec![-1.0, -1.5]], vec![1, 0], None).unwrap();
    let vf = ValueFunction::custom(|m, d| {
        let mut total = 0.0;
        for i in 0..d.len() {
            total += m.loss_and_gradient(d.row(i), d.label(i))?.0;
        }
        Ok(-total / d.len() as f64)
    });
    let cfg = TrainConfig {
        epochs: 1,
        seed: 6,
        ..TrainConfig::default()
    };
    let mc = data_shap_mc(&train, &test, &cfg, &vf, 2000).unwrap();
    let exact = per_step_exact(&train, &test, &cfg, &vf, 2000);
    let (&top, &v) = exact.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let est = mc.phi_of(top).unwrap();
    assert!((est - v).abs() <= 0.05 * v.abs(), "sample {top}: {est} vs exact {v}");
}

#[test]
fn planted_outlier_sign_matches_leave_one_out() {
    // Negatives near (-2, 0), positives near (2, 0), and one negative deep
    // inside the positive region.
    let train = Dataset::from_rows(
        vec![
            vec![-2.0, 0.3],
            vec![-2.5, -0.4],
            vec![-1.6, 0.1],
            vec![2.0, 0.2],
            vec![2.4, -0.3],
            vec![1.7, 0.5],
            vec![2.2, 0.0],
            vec![3.5, 0.0],
        ],
        vec![0, 0, 0, 1, 1, 1, 1, 0],
        None,
    )
    .unwrap();
    let outlier = 7u64;
    let test = Dataset::from_rows(
        vec![vec![-1.0, 0.0], vec![-1.5, 0.5], vec![-0.5, -0.5], vec![-2.0, 0.0], vec![1.5, 0.0]],
        vec![0, 0, 0, 0, 1],
        None,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let s = influence_scores(&train, &test, &cfg, &ValueFunction::avg_recourse_cost_proxy(), 200).unwrap();
    let without = cfinfluence::data::remove_samples(&train, &[outlier]).unwrap();
    let proxy_after = |d: &Dataset, seed: u64| {
        let m = MlpClassifier::fit(d, &cfg.with_seed(seed)).unwrap();
        avg_cost_proxy(&m, &test).unwrap()
    };
    let loo: f64 = (0..20).map(|k| proxy_after(&train, k) - proxy_after(&without, k)).sum::<f64>() / 20.0;
    let phi = s.phi_of(outlier).unwrap();
    assert!(loo.abs() > 1e-3, "leave-one-out effect too small to compare: {loo}");
    assert_eq!(phi.signum(), loo.signum(), "phi {phi}, leave-one-out {loo}");
}

fn scores_from(history: Vec<Vec<f64>>) -> InfluenceScores {
    let ids = (0..history[0].len() as u64).collect::<Vec<_>>();
    InfluenceScores::from_history(ids, history, 1).unwrap()
}

#[test]
fn selection_and_diagnostics_worked_examples() {
    let s = scores_from(vec![vec![0.5, -0.9, 0.1]]);
    assert_eq!(select_influential(&s, Some(2), None, SelectionMode::AbsoluteTop).unwrap(), vec![1, 0]);
    assert_eq!(select_influential(&s, Some(2), None, SelectionMode::PositiveTop).unwrap(), vec![0, 2]);
    assert_eq!(select_influential(&s, None, Some(0.6), SelectionMode::AbsoluteTop).unwrap(), vec![1]);
    assert!(select_influential(&s, Some(4), None, SelectionMode::AbsoluteTop).is_err());

    let flat = scores_from(vec![vec![0.3, 0.7]; 6]);
    assert_eq!(convergence_diagnostics(&flat, DEFAULT_STABILITY_RATIO).stability_ratio, 0.0);
    let osc = scores_from(vec![vec![1.0], vec![-1.0]]);
    assert!(!convergence_diagnostics(&osc, DEFAULT_STABILITY_RATIO).converged);
}
