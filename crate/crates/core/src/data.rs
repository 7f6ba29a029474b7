//! Tabular datasets: CSV ingestion, the two benchmark loaders, standardization,
//! k-fold splitting and removal bookkeeping.
//!
//! Samples are identified by a stable `sample_id` assigned at load time (file
//! order). Ids survive shuffling, splitting and removal, so influence scores can
//! always be mapped back to the original rows.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::stream_rng;

pub const DIABETES_ROWS: usize = 442;
pub const CREDIT_ROWS: usize = 1000;

/// Numeric columns of the German Credit table (UCI column names).
pub const CREDIT_NUMERIC_COLUMNS: [&str; 7] = [
    "duration_in_month",
    "credit_amount",
    "installment_rate_in_percentage_of_disposable_income",
    "present_residence_since",
    "age_in_years",
    "number_of_existing_credits_at_this_bank",
    "number_of_people_being_liable_to_provide_maintenance_for",
];

const DIABETES_FEATURES: [&str; 9] = ["age", "bmi", "bp", "s1", "s2", "s3", "s4", "s5", "s6"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    protected: Option<Vec<u8>>,
    sample_ids: Vec<u64>,
    feature_names: Vec<String>,
    /// Continuous target kept for datasets whose label is a median split that
    /// has to be recomputed on each training fold.
    raw_target: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset with ids `0..N` in row order.
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
        protected: Option<Vec<u8>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let dim = feature_names.len();
        let mut features = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} features, expected {dim}",
                    r.len()
                )));
            }
            features.extend_from_slice(r);
        }
        let ids = (0..rows.len() as u64).collect();
        Self::from_parts(features, dim, labels, protected, ids, feature_names)
    }

    /// Unnamed features `x0, x1, ...`; convenient for synthetic data.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<u8>, protected: Option<Vec<u8>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let names = (0..dim).map(|j| format!("x{j}")).collect();
        Self::new(rows, labels, protected, names)
    }

    pub fn from_parts(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<u8>,
        protected: Option<Vec<u8>>,
        sample_ids: Vec<u64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if feature_names.len() != dim {
            return Err(Error::InvalidData(format!(
                "{} feature names for {dim} features",
                feature_names.len()
            )));
        }
        if features.len() != n * dim {
            return Err(Error::InvalidData(format!(
                "feature buffer holds {} values, expected {n} x {dim}",
                features.len()
            )));
        }
        if sample_ids.len() != n {
            return Err(Error::InvalidData(format!(
                "{} sample ids for {n} labels",
                sample_ids.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidData(format!("label {bad} is not binary")));
        }
        if let Some(p) = &protected {
            if p.len() != n {
                return Err(Error::InvalidData(format!(
                    "{} protected values for {n} samples",
                    p.len()
                )));
            }
            if let Some(bad) = p.iter().find(|&&q| q > 1) {
                return Err(Error::InvalidData(format!(
                    "protected attribute {bad} is not binary"
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = sample_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidData(format!("duplicate sample id {dup}")));
        }
        Ok(Self {
            features,
            dim,
            labels,
            protected,
            sample_ids,
            feature_names,
            raw_target: None,
        })
    }

    pub fn with_raw_target(mut self, target: Vec<f64>) -> Result<Self> {
        if target.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "{} target values for {} samples",
                target.len(),
                self.len()
            )));
        }
        self.raw_target = Some(target);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and zero-dimensional datasets cannot be built from files anyway.
        self.features.chunks_exact(self.dim.max(1))
    }

    #[inline]
    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn protected(&self) -> Option<&[u8]> {
        self.protected.as_deref()
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn raw_target(&self) -> Option<&[f64]> {
        self.raw_target.as_deref()
    }

    /// `(negatives, positives)`
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.len() - pos, pos)
    }

    pub fn index_of(&self) -> HashMap<u64, usize> {
        self.sample_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Rows at `indices`, in that order, keeping their ids.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            protected: self
                .protected
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
            feature_names: self.feature_names.clone(),
            raw_target: self
                .raw_target
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Relabels from the raw target: `y = 1` iff `target <= threshold`.
    pub fn relabel_at(&self, threshold: f64) -> Result<Dataset> {
        let target = self
            .raw_target
            .as_ref()
            .ok_or_else(|| Error::InvalidData("dataset has no continuous target".into()))?;
        let mut out = self.clone();
        out.labels = target.iter().map(|&t| u8::from(t <= threshold)).collect();
        Ok(out)
    }

    fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> Dataset {
        let dim = self.dim;
        let mut out = self.clone();
        for (k, v) in out.features.iter_mut().enumerate() {
            *v = f(k % dim, *v);
        }
        out
    }
}

/// Median with the even-length convention of averaging the two middle values.
/// What `validate` reports about a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub dim: usize,
    pub class_counts: [usize; 2],
    pub group_counts: Option<[usize; 2]>,
    /// Features with zero spread; they standardize to 0 and carry no signal.
    pub constant_features: Vec<String>,
}

impl Dataset {
    /// Integrity checks beyond what construction enforces: at least one sample,
    /// finite features, both classes present.
    pub fn summary(&self) -> Result<DatasetSummary> {
        if self.is_empty() {
            return Err(Error::InvalidData("dataset has no samples".into()));
        }
        if let Some(k) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value in row {}, feature `{}`",
                k / self.dim.max(1),
                self.feature_names[k % self.dim.max(1)]
            )));
        }
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::InvalidData(format!(
                "both classes are required, got {neg} negatives and {pos} positives"
            )));
        }
        let group_counts = self.protected.as_ref().map(|p| {
            let ones = p.iter().filter(|&&q| q == 1).count();
            [p.len() - ones, ones]
        });
        let constant_features = (0..self.dim)
            .filter(|&j| {
                let first = self.row(0)[j];
                self.rows().all(|r| r[j] == first)
            })
            .map(|j| self.feature_names[j].clone())
            .collect();
        Ok(DatasetSummary {
            n_samples: self.len(),
            dim: self.dim,
            class_counts: [neg, pos],
            group_counts,
            constant_features,
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

struct RawTable {
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
    path: String,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| csv_error(&display, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let records = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_error(&display, e))?;
        Ok(Self {
            headers,
            records,
            path: display,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_owned(),
                path: self.path.clone(),
            })
    }

    fn column_ci(&self, names: &[&str]) -> Result<usize> {
        names
            .iter()
            .find_map(|n| self.headers.iter().position(|h| h.eq_ignore_ascii_case(n)))
            .ok_or_else(|| Error::Schema {
                column: names[0].to_owned(),
                path: self.path.clone(),
            })
    }

    /// Data rows are numbered from 1, not counting the header.
    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let raw = self.records[row].get(col).unwrap_or("");
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row: row + 1,
                column: self.headers[col].clone(),
                message: format!("`{raw}` is not a finite number"),
            })
    }

    fn binary(&self, row: usize, col: usize, what: &str) -> Result<u8> {
        let v = self.number(row, col)?;
        if v == 0.0 || v == 1.0 {
            Ok(v as u8)
        } else {
            Err(Error::Parse {
                row: row + 1,
                column: self.headers[col].clone(),
                message: format!("{what} must be 0 or 1, got {v}"),
            })
        }
    }

    fn text(&self, row: usize, col: usize) -> &str {
        self.records[row].get(col).unwrap_or("")
    }

    fn len(&self) -> usize {
        self.records.len()
    }
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        row,
        column: String::new(),
        message: format!("{path}: {e}"),
    }
}

/// Reads a headed CSV. Every column except the label (and protected) column is
/// a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, protected_column: Option<&str>) -> Result<Dataset> {
    let table = RawTable::read(path.as_ref())?;
    let label_col = table.column(label_column)?;
    let protected_col = protected_column.map(|c| table.column(c)).transpose()?;
    let feature_cols: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != label_col && Some(c) != protected_col)
        .collect();
    let mut rows = Vec::with_capacity(table.len());
    let mut labels = Vec::with_capacity(table.len());
    let mut protected = protected_col.map(|_| Vec::with_capacity(table.len()));
    for r in 0..table.len() {
        rows.push(
            feature_cols
                .iter()
                .map(|&c| table.number(r, c))
                .collect::<Result<Vec<_>>>()?,
        );
        labels.push(table.binary(r, label_col, "label")?);
        if let (Some(p), Some(c)) = (protected.as_mut(), protected_col) {
            p.push(table.binary(r, c, "protected attribute")?);
        }
    }
    let names = feature_cols.iter().map(|&c| table.headers[c].clone()).collect();
    Dataset::new(rows, labels, protected, names)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    /// Append the protected attribute to the model features (it is always kept
    /// as the grouping attribute).
    pub protected_as_feature: bool,
}

fn check_rows(name: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Integrity(format!(
            "{name} file has {got} rows, expected {expected}"
        )));
    }
    Ok(())
}

/// Maps a sex column coded `{1, 2}` (or already `{0, 1}`) onto `{0, 1}`.
fn sex_code(table: &RawTable, row: usize, col: usize) -> Result<u8> {
    match table.number(row, col)? {
        v if v == 0.0 || v == 1.0 => Ok(v as u8),
        v if v == 2.0 => Ok(1),
        v => Err(Error::Parse {
            row: row + 1,
            column: table.headers[col].clone(),
            message: format!("sex must be coded 0/1 or 1/2, got {v}"),
        }),
    }
}

/// Diabetes progression data: columns `age, sex, bmi, bp, s1..s6, y`.
///
/// The label is `1` (favorable) when progression is at or below the median.
/// The continuous target is retained so [`kfold`] can recompute the median on
/// each training split.
pub fn load_diabetes(path: impl AsRef<Path>) -> Result<Dataset> {
    load_diabetes_with(path, BenchmarkOptions::default())
}

pub fn load_diabetes_with(path: impl AsRef<Path>, opts: BenchmarkOptions) -> Result<Dataset> {
    let table = RawTable::read(path.as_ref())?;
    check_rows("diabetes", table.len(), DIABETES_ROWS)?;
    let cols = DIABETES_FEATURES
        .iter()
        .map(|c| table.column_ci(&[c]))
        .collect::<Result<Vec<_>>>()?;
    let sex_col = table.column_ci(&["sex"])?;
    let target_col = table.column_ci(&["y", "target", "progression"])?;

    let mut rows = Vec::with_capacity(table.len());
    let mut sex = Vec::with_capacity(table.len());
    let mut target = Vec::with_capacity(table.len());
    for r in 0..table.len() {
        let mut row = cols.iter().map(|&c| table.number(r, c)).collect::<Result<Vec<_>>>()?;
        let q = sex_code(&table, r, sex_col)?;
        if opts.protected_as_feature {
            row.push(f64::from(q));
        }
        rows.push(row);
        sex.push(q);
        target.push(table.number(r, target_col)?);
    }
    let mut names: Vec<String> = DIABETES_FEATURES.iter().map(|s| s.to_string()).collect();
    if opts.protected_as_feature {
        names.push("sex".into());
    }
    let threshold = median(&target).expect("row count checked");
    let labels = target.iter().map(|&t| u8::from(t <= threshold)).collect();
    Dataset::new(rows, labels, Some(sex), names)?.with_raw_target(target)
}

/// German Credit table with UCI column names. Only the seven numeric columns
/// are used. `sex` comes from `personal_status_and_sex` (`A92`/`A95` female = 1)
/// or from a numeric `sex` column; `credit_risk` 1 (good) maps to label 1 and
/// 2 (bad) to label 0.
pub fn load_credit(path: impl AsRef<Path>) -> Result<Dataset> {
    load_credit_with(path, BenchmarkOptions::default())
}

pub fn load_credit_with(path: impl AsRef<Path>, opts: BenchmarkOptions) -> Result<Dataset> {
    let table = RawTable::read(path.as_ref())?;
    check_rows("credit", table.len(), CREDIT_ROWS)?;
    let cols = CREDIT_NUMERIC_COLUMNS
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<Vec<_>>>()?;
    let target_col = table.column("credit_risk")?;
    let status_col = table.column("personal_status_and_sex").ok();
    let sex_col = match status_col {
        Some(_) => None,
        None => Some(table.column("sex")?),
    };

    let mut rows = Vec::with_capacity(table.len());
    let mut sex = Vec::with_capacity(table.len());
    let mut labels = Vec::with_capacity(table.len());
    for r in 0..table.len() {
        let mut row = cols.iter().map(|&c| table.number(r, c)).collect::<Result<Vec<_>>>()?;
        let q = match (status_col, sex_col) {
            (Some(c), _) => match table.text(r, c) {
                "A91" | "A93" | "A94" => 0,
                "A92" | "A95" => 1,
                other => {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: table.headers[c].clone(),
                        message: format!("unknown personal status code `{other}`"),
                    })
                }
            },
            (None, Some(c)) => sex_code(&table, r, c)?,
            (None, None) => unreachable!("one of the sex columns was resolved"),
        };
        if opts.protected_as_feature {
            row.push(f64::from(q));
        }
        let y = match table.number(r, target_col)? {
            v if v == 1.0 => 1,
            v if v == 2.0 || v == 0.0 => 0,
            v => {
                return Err(Error::Parse {
                    row: r + 1,
                    column: "credit_risk".into(),
                    message: format!("credit risk must be 1/2 or 0/1, got {v}"),
                })
            }
        };
        rows.push(row);
        sex.push(q);
        labels.push(y);
    }
    let mut names: Vec<String> = CREDIT_NUMERIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    if opts.protected_as_feature {
        names.push("sex".into());
    }
    Dataset::new(rows, labels, Some(sex), names)
}

/// Per-feature affine map fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; constant columns get divisor 1.
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidData("cannot standardize an empty dataset".into()));
        }
        let n = train.len() as f64;
        let d = train.dim();
        let mut means = vec![0.0; d];
        for row in train.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; d];
        for row in train.rows() {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for (j, s) in scales.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s <= 1e-12 {
                warn!(
                    "feature `{}` is constant on the training set; leaving it unscaled",
                    train.feature_names()[j]
                );
                *s = 1.0;
            }
        }
        Ok(Self { means, scales })
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.means.len() {
            return Err(Error::Shape {
                expected: self.means.len(),
                got: data.dim(),
            });
        }
        Ok(data.map_features(|j, v| (v - self.means[j]) / self.scales[j]))
    }

    pub fn transform_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Standardizes `train` to zero mean / unit variance per feature and applies
/// the same transform to every dataset in `others`.
pub fn standardize(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let st = Standardizer::fit(train)?;
    let train = st.transform(train)?;
    let others = others.iter().map(|d| st.transform(d)).collect::<Result<Vec<_>>>()?;
    Ok((train, others, st))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub fold_index: usize,
}

/// Seeded shuffled k-fold partition. Test folds differ in size by at most one.
/// Datasets carrying a continuous target are relabelled at the median of each
/// training split.
pub fn kfold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
    }
    if data.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot be split into {k} folds",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(seed, 2));
    let base = data.len() / k;
    let extra = data.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test_idx = order[start..start + size].to_vec();
        let mut train_idx: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        start += size;
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        let mut train = data.subset(&train_idx);
        let mut test = data.subset(&test_idx);
        if let Some(target) = train.raw_target() {
            let threshold = median(target).expect("training split is non-empty");
            train = train.relabel_at(threshold)?;
            test = test.relabel_at(threshold)?;
        }
        folds.push(FoldSplit {
            train,
            test,
            fold_index: f,
        });
    }
    Ok(folds)
}

/// `data` without the samples in `ids`, remaining rows in their original order.
pub fn remove_samples(data: &Dataset, ids: &[u64]) -> Result<Dataset> {
    let present: HashSet<u64> = data.sample_ids().iter().copied().collect();
    if let Some(missing) = ids.iter().find(|id| !present.contains(id)) {
        return Err(Error::NotFound(*missing));
    }
    let drop: HashSet<u64> = ids.iter().copied().collect();
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| !drop.contains(&data.sample_ids()[i]))
        .collect();
    Ok(data.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy(n: usize) -> Dataset {
        let rows = (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        Dataset::from_rows(rows, labels, None).unwrap()
    }

    #[test]
    fn csv_basic_parse() {
        let f = write_tmp("a,b,y\n1,2,0\n3,4.5,1\n-1,0,1\n");
        let d = load_csv(f.path(), "y", None).unwrap();
        assert_eq!((d.len(), d.dim()), (3, 2));
        assert_eq!(d.row(1), &[3.0, 4.5]);
        assert_eq!(d.labels(), &[0, 1, 1]);
        assert_eq!(d.sample_ids(), &[0, 1, 2]);
        assert!(d.protected().is_none());
        assert_eq!(d.feature_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn csv_protected_column_is_not_a_feature() {
        let f = write_tmp("a,q,y\n1,0,0\n3,1,1\n");
        let d = load_csv(f.path(), "y", Some("q")).unwrap();
        assert_eq!(d.dim(), 1);
        assert_eq!(d.protected(), Some(&[0u8, 1][..]));
    }

    #[test]
    fn csv_non_binary_label_is_a_parse_error() {
        let f = write_tmp("a,y\n1,0\n2,2\n");
        match load_csv(f.path(), "y", None) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_reports_location_of_bad_cell() {
        let f = write_tmp("a,b,y\n1,2,0\n1,oops,1\n");
        match load_csv(f.path(), "y", None) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "b"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_column_is_schema_error() {
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(load_csv(f.path(), "y", None), Err(Error::Schema { .. })));
        let f = write_tmp("a,y\n1,0\n");
        assert!(matches!(load_csv(f.path(), "y", Some("sex")), Err(Error::Schema { .. })));
    }

    #[test]
    fn truncated_benchmarks_fail_integrity() {
        let f = write_tmp("age,sex,bmi,bp,s1,s2,s3,s4,s5,s6,y\n59,2,32.1,101,157,93.2,38,4,4.8598,87,151\n");
        assert!(matches!(load_diabetes(f.path()), Err(Error::Integrity(_))));
        let f = write_tmp("duration_in_month,credit_risk\n6,1\n");
        assert!(matches!(load_credit(f.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn standardize_unit_column() {
        let d = Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]], vec![0, 1, 0], None).unwrap();
        let (t, _, st) = standardize(&d, &[]).unwrap();
        let col: Vec<f64> = t.rows().map(|r| r[0]).collect();
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert_relative_eq!(mean, 0.0, epsilon = 1e-15);
        assert_relative_eq!(var, 1.0, epsilon = 1e-12);
        assert_relative_eq!(st.means[0], 2.0);
    }

    #[test]
    fn standardize_uses_train_statistics_for_others() {
        let train = Dataset::from_rows(vec![vec![0.0], vec![2.0]], vec![0, 1], None).unwrap();
        let test = Dataset::from_rows(vec![vec![10.0], vec![12.0]], vec![0, 1], None).unwrap();
        let (_, others, _) = standardize(&train, &[test]).unwrap();
        // train mean 1, std 1: test must map to 9 and 11, not to its own +-1.
        assert_eq!(others[0].row(0), &[9.0]);
        assert_eq!(others[0].row(1), &[11.0]);
    }

    #[test]
    fn standardize_constant_column_becomes_zero() {
        let d = Dataset::from_rows(vec![vec![5.0, 1.0], vec![5.0, 2.0]], vec![0, 1], None).unwrap();
        let (t, _, st) = standardize(&d, &[]).unwrap();
        assert!(t.rows().all(|r| r[0] == 0.0));
        assert_eq!(st.scales[0], 1.0);
    }

    #[test]
    fn standardize_is_idempotent() {
        let d = toy(13);
        let (once, _, _) = standardize(&d, &[]).unwrap();
        let (twice, _, _) = standardize(&once, &[]).unwrap();
        for (a, b) in once.rows().zip(twice.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn kfold_sizes_and_determinism() {
        let d = toy(10);
        let folds = kfold(&d, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
        assert_eq!(folds, kfold(&d, 5, 3).unwrap());
        assert_ne!(folds, kfold(&d, 5, 4).unwrap());
        assert!(matches!(kfold(&toy(3), 5, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(kfold(&d, 1, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn kfold_relabels_continuous_target_per_split() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let target: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = Dataset::from_rows(rows, vec![0; 10], None)
            .unwrap()
            .with_raw_target(target)
            .unwrap();
        for f in kfold(&d, 5, 1).unwrap() {
            let m = median(f.train.raw_target().unwrap()).unwrap();
            for (y, t) in f.test.labels().iter().zip(f.test.raw_target().unwrap()) {
                assert_eq!(*y, u8::from(*t <= m));
            }
            let (neg, pos) = f.train.class_counts();
            assert_eq!(neg, pos);
        }
    }

    #[test]
    fn removal_examples() {
        let d = toy(4);
        assert_eq!(remove_samples(&d, &[]).unwrap(), d);
        assert!(remove_samples(&d, &[0, 1, 2, 3]).unwrap().is_empty());
        let r = remove_samples(&d, &[0, 2]).unwrap();
        assert_eq!(r.sample_ids(), &[1, 3]);
        assert_eq!(r.row(0), d.row(1));
        assert!(matches!(remove_samples(&d, &[9]), Err(Error::NotFound(9))));
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let r = Dataset::from_parts(vec![0.0, 1.0], 1, vec![0, 1], None, vec![4, 4], vec!["a".into()]);
        assert!(matches!(r, Err(Error::InvalidData(_))));
    }

    proptest! {
        #[test]
        fn kfold_is_a_partition(k in 2usize..=10, extra in 0usize..40, seed in any::<u64>()) {
            let n = k + extra;
            let d = toy(n);
            let folds = kfold(&d, k, seed).unwrap();
            let mut seen = HashSet::new();
            let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in &folds {
                let train: HashSet<_> = f.train.sample_ids().iter().collect();
                for id in f.test.sample_ids() {
                    prop_assert!(!train.contains(id));
                    prop_assert!(seen.insert(*id));
                }
                prop_assert_eq!(f.train.len() + f.test.len(), n);
            }
            prop_assert_eq!(seen.len(), n);
        }

        #[test]
        fn removal_composes(n in 1usize..30, mask in prop::collection::vec(0u8..3, 30)) {
            let d = toy(n);
            let a: Vec<u64> = (0..n as u64).filter(|&i| mask[i as usize] == 1).collect();
            let b: Vec<u64> = (0..n as u64).filter(|&i| mask[i as usize] == 2).collect();
            let union: Vec<u64> = a.iter().chain(&b).copied().collect();
            let once = remove_samples(&d, &union).unwrap();
            let twice = remove_samples(&remove_samples(&d, &a).unwrap(), &b).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
