use std::fs;
use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;
use serde::{Deserialize, Serialize};
use specbias::artifact::{
    emit_report, import_embeddings, read_epochs, read_json, verify, write_embeddings, write_epochs,
};
use specbias::canonical::to_canonical_json;
use specbias::{EmbeddingSet, EpochMeta, EpochSet, Error};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Report {
    name: String,
    r2: f64,
    folds: Vec<Option<f64>>,
    n: u64,
}

fn write_external(dir: &Path, n_manifest: usize, d: usize, values: &[f32]) -> std::path::PathBuf {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join("ext.emb.f32"), bytes).unwrap();
    let manifest = serde_json::json!({
        "kind": "embeddings", "version": 1, "shape": [n_manifest, d], "producer_digest": "external",
        "n": n_manifest, "d": d, "embedder_id": "foundation", "config_digest": "external",
        "payload": "ext.emb.f32"
    });
    let path = dir.join("ext.emb.json");
    fs::write(&path, manifest.to_string()).unwrap();
    path
}

fn corrupt_message(r: specbias::Result<EmbeddingSet>) -> String {
    match r {
        Err(Error::Corrupt { reason, .. }) => reason,
        other => panic!("expected a corrupt-artifact error, got {other:?}"),
    }
}

#[test]
fn external_embeddings_import() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f32> = (0..30).map(|v| v as f32 * 0.5).collect();
    let e = import_embeddings(&write_external(dir.path(), 10, 3, &values)).unwrap();
    assert_eq!((e.len(), e.dim()), (10, 3));
    assert_eq!(e.data[[9, 2]], 14.5);
    assert_eq!(e.embedder_id, "foundation");
}

#[test]
fn row_count_mismatch_names_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    let values = vec![1.0f32; 27];
    let msg = corrupt_message(import_embeddings(&write_external(dir.path(), 10, 3, &values)));
    assert!(msg.contains("10") && msg.contains('9'), "{msg}");
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = vec![1.0f32; 30];
    values.pop();
    let path = write_external(dir.path(), 10, 3, &values);
    let bytes = fs::read(dir.path().join("ext.emb.f32")).unwrap();
    fs::write(dir.path().join("ext.emb.f32"), &bytes[..bytes.len() - 2]).unwrap();
    let msg = corrupt_message(import_embeddings(&path));
    assert!(msg.contains("truncated"), "{msg}");
}

#[test]
fn non_finite_value_names_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = vec![0.25f32; 30];
    values[3 * 7 + 1] = f32::NAN;
    let msg = corrupt_message(import_embeddings(&write_external(dir.path(), 10, 3, &values)));
    assert!(msg.contains("row 7"), "{msg}");
}

#[test]
fn epochs_round_trip_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let meta: Vec<EpochMeta> = (0..3)
        .map(|i| EpochMeta {
            theta: Some(i as f64 / 3.0),
            subject_id: Some(format!("s{i}")),
            task_id: None,
            seed_used: 1 << 60 | i,
        })
        .collect();
    let set = EpochSet::new(Array2::from_shape_fn((6, 5), |(i, j)| (i * 5 + j) as f32 - 7.5), 250.0, 2, meta).unwrap();
    let m = write_epochs(&set, &dir.path().join("x"), "abc").unwrap();
    assert!(m.ends_with("x.epochs.json"));
    assert!(dir.path().join("x.epochs.f32").exists());
    assert_eq!(read_epochs(&m).unwrap(), set);
    assert_eq!(verify(&m).unwrap().shape, vec![3, 2, 5]);
}

#[test]
fn writing_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let e = EmbeddingSet::new(Array2::from_elem((4, 2), 0.1f32), "x".into(), "d".into()).unwrap();
    let a = write_embeddings(&e, &dir.path().join("a")).unwrap();
    let first = (fs::read(&a).unwrap(), fs::read(dir.path().join("a.emb.f32")).unwrap());
    write_embeddings(&e, &dir.path().join("a")).unwrap();
    let second = (fs::read(&a).unwrap(), fs::read(dir.path().join("a.emb.f32")).unwrap());
    assert_eq!(first, second);
}

#[test]
fn report_emit_parse_and_nan_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let r = Report {
        name: "beta".into(),
        r2: 0.987_654_321_012_345_6,
        folds: vec![Some(0.9), None, Some(1.0 / 7.0)],
        n: 1000,
    };
    let path = dir.path().join("r.json");
    emit_report(&r, &path).unwrap();
    let back: Report = read_json(&path).unwrap();
    assert_eq!(back, r);
    verify(&path).unwrap();

    let bad = Report { r2: f64::NAN, ..r };
    let nan_path = dir.path().join("nan.json");
    assert!(matches!(emit_report(&bad, &nan_path), Err(Error::NonFinite(_))));
    assert!(!nan_path.exists());
}

#[test]
fn non_canonical_report_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    fs::write(&path, "{\"b\": 1, \"a\": 2}\n").unwrap();
    assert!(matches!(verify(&path), Err(Error::Corrupt { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embeddings_round_trip_bit_for_bit(
        n in 1usize..20,
        d in 1usize..8,
        seed in any::<u32>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_fn((n, d), |(i, j)| {
            f32::from_bits((seed.wrapping_mul(2_654_435_761) ^ (i * 31 + j) as u32) & 0x3fff_ffff)
        });
        let e = EmbeddingSet::new(data, "p".into(), "q".into()).unwrap();
        let m = write_embeddings(&e, &dir.path().join("e")).unwrap();
        let back = import_embeddings(&m).unwrap();
        prop_assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            e.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!(back.embedder_id, e.embedder_id);
    }

    #[test]
    fn any_single_byte_corruption_is_detected(pos in 0usize..96, flip in 1u8..=255) {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbeddingSet::new(Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f32), "p".into(), "q".into()).unwrap();
        let m = write_embeddings(&e, &dir.path().join("e")).unwrap();
        let payload = dir.path().join("e.emb.f32");
        let mut bytes = fs::read(&payload).unwrap();
        bytes[pos] ^= flip;
        fs::write(&payload, bytes).unwrap();
        let failed = matches!(verify(&m), Err(Error::Corrupt { .. }));
        prop_assert!(failed);
    }

    #[test]
    fn canonical_json_is_a_fixed_point(
        name in "[a-z]{0,8}",
        r2 in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        folds in prop::collection::vec(prop::option::of(-1e300f64..1e300), 0..5),
        n in any::<u64>(),
    ) {
        let r = Report { name, r2, folds, n };
        let text = to_canonical_json(&r).unwrap();
        let back: Report = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(to_canonical_json(&back).unwrap(), text);
    }
}
