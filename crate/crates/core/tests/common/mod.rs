#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use cfinfluence::harness::CurvePoint;
use cfinfluence::Dataset;

/// Average ranks (1-based), ties share the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Writes features, `y` and (if present) `q` columns.
pub fn write_csv(data: &Dataset, path: &Path) {
    let mut s = String::new();
    let mut header: Vec<String> = data.feature_names().to_vec();
    header.push("y".into());
    if data.protected().is_some() {
        header.push("q".into());
    }
    writeln!(s, "{}", header.join(",")).unwrap();
    for i in 0..data.len() {
        let mut cells: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        cells.push(data.label(i).to_string());
        if let Some(q) = data.protected() {
            cells.push(q[i].to_string());
        }
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    std::fs::write(path, s).unwrap();
}

/// Removal lowered the quantity by more than two standard errors of the
/// difference of the two retrain means.
pub fn significantly_reduced(baseline: &CurvePoint, after: &CurvePoint) -> bool {
    let se = ((baseline.quantity_var / baseline.n_runs as f64) + (after.quantity_var / after.n_runs as f64)).sqrt();
    baseline.quantity_mean - after.quantity_mean > 2.0 * se
}
