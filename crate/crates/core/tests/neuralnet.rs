use cfinfluence::neuralnet::{accuracy, f1_score};
use cfinfluence::synthetic::gaussian_blobs;
use cfinfluence::{Dataset, MlpClassifier, TrainConfig};

fn blobs() -> Dataset {
    gaussian_blobs(20, 2, 4.0, 0.7, 3).unwrap()
}

#[test]
fn separable_blobs_are_learned() {
    let data = blobs();
    assert_eq!(data.len(), 40);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let m = MlpClassifier::fit(&data, &cfg).unwrap();
    let acc = accuracy(data.labels(), &m.predict_dataset(&data)).unwrap();
    assert!(acc >= 0.95, "training accuracy {acc}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = blobs();
    let cfg = TrainConfig::default().with_seed(17);
    let a = MlpClassifier::fit(&data, &cfg).unwrap();
    let b = MlpClassifier::fit(&data, &cfg).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    let c = MlpClassifier::fit(&data, &cfg.with_seed(18)).unwrap();
    assert_ne!(a.parameters(), c.parameters());
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let data = blobs();
    let cfg = TrainConfig {
        epochs: 0,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut m = MlpClassifier::from_config(2, &cfg).unwrap();
    let before = m.parameters();
    m.train(&data, &cfg).unwrap();
    assert_eq!(m.parameters(), before);
}

#[test]
fn training_rejects_mismatched_dimensions() {
    let data = blobs();
    let mut m = MlpClassifier::from_config(3, &TrainConfig::default()).unwrap();
    assert!(m.train(&data, &TrainConfig::default()).is_err());
}

#[test]
fn f1_worked_examples() {
    assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
    assert!((f1_score(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(f1_score(&[1, 1, 0], &[0, 0, 0]).unwrap(), 0.0);
}
