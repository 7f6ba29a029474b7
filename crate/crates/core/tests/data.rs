use std::path::PathBuf;

use cfinfluence::data::{kfold, load_credit, load_csv, load_diabetes, remove_samples, standardize, CREDIT_NUMERIC_COLUMNS};
use cfinfluence::Error;

fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn diabetes_benchmark_has_442_patients() {
    let d = load_diabetes(data_file("diabetes.csv")).unwrap();
    assert_eq!(d.len(), 442);
    assert_eq!(d.dim(), 9);
    assert!(d.protected().is_some());
    assert!(d.raw_target().is_some());
}

#[test]
fn credit_benchmark_has_1000_rows_and_seven_numeric_features() {
    let d = load_credit(data_file("german_credit.csv")).unwrap();
    assert_eq!(d.len(), 1000);
    assert_eq!(d.dim(), 7);
    assert_eq!(d.feature_names(), CREDIT_NUMERIC_COLUMNS);
    let s = d.summary().unwrap();
    assert_eq!(s.class_counts[0] + s.class_counts[1], 1000);
    assert!(s.group_counts.is_some());
}

#[test]
fn csv_round_trip_through_folds_and_removal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut text = String::from("a,b,y\n");
    for i in 0..10 {
        text += &format!("{},{},{}\n", i, 10 - i, i % 2);
    }
    std::fs::write(&path, text).unwrap();
    let d = load_csv(&path, "y", None).unwrap();
    assert_eq!((d.len(), d.dim()), (10, 2));
    assert!(d.protected().is_none());

    let folds = kfold(&d, 5, 1).unwrap();
    assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
    let (train, test, _) = standardize(&folds[0].train, std::slice::from_ref(&folds[0].test)).unwrap();
    let mean: f64 = train.rows().map(|r| r[0]).sum::<f64>() / train.len() as f64;
    assert!(mean.abs() < 1e-12);
    assert_eq!(test[0].sample_ids(), folds[0].test.sample_ids());

    let reduced = remove_samples(&d, &[0, 2]).unwrap();
    assert_eq!(reduced.len(), 8);
    assert!(!reduced.sample_ids().contains(&0));
}

#[test]
fn summary_rejects_single_class_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "a,y\n1,1\n2,1\n").unwrap();
    let d = load_csv(&path, "y", None).unwrap();
    assert!(matches!(d.summary(), Err(Error::InvalidData(_))));
}
