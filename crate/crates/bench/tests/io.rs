use std::fs;

use rff_bench::error::LoadError;
use rff_bench::io::{load_dataset, save_dataset, LABELS, SPLITS};
use rff_core::data::{make_synthetic, SyntheticSpec};

fn saved() -> (tempfile::TempDir, rff_core::data::DatasetBundle) {
    let dir = tempfile::tempdir().unwrap();
    let bundle = make_synthetic(&SyntheticSpec::default()).unwrap().bundle;
    save_dataset(dir.path(), &bundle).unwrap();
    (dir, bundle)
}

#[test]
fn dataset_round_trip_is_exact() {
    let (dir, bundle) = saved();
    assert_eq!(load_dataset(dir.path()).unwrap(), bundle);
}

#[test]
fn out_of_range_label_names_file_and_row() {
    let (dir, _) = saved();
    let path = dir.path().join(LABELS);
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[6] = "99".into();
    fs::write(&path, lines.join("\n")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, LoadError::LabelOutOfRange { row: 7, .. }), "{err:?}");
    let msg = err.to_string();
    assert!(msg.contains("label out of range") && msg.contains(LABELS) && msg.contains('7'), "{msg}");
}

#[test]
fn overlapping_splits_are_rejected() {
    let (dir, bundle) = saved();
    let path = dir.path().join(SPLITS);
    let text = fs::read_to_string(&path).unwrap();
    let stolen = bundle.seen_classes[0];
    let text = text.replace("unseen: ", &format!("unseen: {stolen},"));
    fs::write(&path, text).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, LoadError::SplitOverlap { row: 2, .. }), "{err:?}");
    assert!(err.to_string().contains("split overlap"));
}

#[test]
fn missing_and_malformed_files() {
    let (dir, _) = saved();
    fs::remove_file(dir.path().join(LABELS)).unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), LoadError::MissingFile { .. }));

    let (dir, _) = saved();
    let path = dir.path().join("features.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("1.0,2.0\n");
    fs::write(&path, text).unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), LoadError::DimensionMismatch { .. }));

    let (dir, _) = saved();
    fs::write(dir.path().join(LABELS), "zero\n").unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), LoadError::Malformed { row: 1, .. }));
}
