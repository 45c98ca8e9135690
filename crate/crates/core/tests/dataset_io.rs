use std::fs;

use tabstruct_core::datagen::{generate, GenConfig};
use tabstruct_core::dataset::{export_dataset, load_dataset, read_records, DATASET_FILE};
use tabstruct_core::Error;

fn config() -> GenConfig {
    GenConfig {
        seed: 7,
        p_span: 0.2,
        ..GenConfig::desk()
    }
}

#[test]
fn export_then_load_roundtrips() {
    let samples = generate(&config(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = export_dataset(&samples, dir.path(), 5).unwrap();
    assert_eq!(read_records(&path).unwrap().len(), 12);
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, samples);
}

#[test]
fn export_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_dataset(&generate(&config(), 5).unwrap(), a.path(), 5).unwrap();
    export_dataset(&generate(&config(), 5).unwrap(), b.path(), 5).unwrap();
    let read = |d: &std::path::Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), DATASET_FILE), read(b.path(), DATASET_FILE));
    for i in 0..5 {
        let f = format!("images/{i:05}.png");
        assert_eq!(read(a.path(), &f), read(b.path(), &f));
    }
}

#[test]
fn truncated_record_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = export_dataset(&generate(&config(), 3).unwrap(), dir.path(), 5).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let half = &lines[1][..lines[1].len() / 2];
    lines[1] = half;
    fs::write(&path, lines.join("\n")).unwrap();
    match read_records(&path) {
        Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a dataset error, got {other:?}"),
    }
}

#[test]
fn empty_dataset_loads_as_empty() {
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&[], dir.path(), 5).unwrap();
    assert!(load_dataset(dir.path()).unwrap().is_empty());
}
