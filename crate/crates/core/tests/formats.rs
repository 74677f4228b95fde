//! Embedding, label and config file handling.

use std::fs;

use kerase::config::RunConfig;
use kerase::data::{
    decode_binary, encode_binary, parse_labels, read_embeddings, read_labels, write_embeddings, write_labels,
};
use kerase::rng::rng_from;
use kerase::{Error, Matrix};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

#[test]
fn binary_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample(50, 8, 1);
    let path = dir.path().join("x.oblv");
    write_embeddings(&path, &m).unwrap();
    assert_eq!(read_embeddings(&path).unwrap(), m);
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"OBLV");
    assert_eq!(bytes.len(), 24 + 50 * 8 * 8);
}

#[test]
fn csv_round_trip_is_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample(50, 8, 2);
    let path = dir.path().join("x.csv");
    write_embeddings(&path, &m).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert_eq!(back.shape(), (50, 8));
    assert!((back - &m).amax() <= 1e-15);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("dim_0,dim_1,"));
}

#[test]
fn corrupt_binary_files_are_rejected() {
    let good = encode_binary(&sample(3, 2, 3));
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_binary(&bad_magic), Err(Error::BadMagic)));
    assert!(matches!(decode_binary(&good[..good.len() - 1]), Err(Error::TruncatedFile { .. })));
    assert!(matches!(decode_binary(&good[..10]), Err(Error::TruncatedFile { .. })));
    let mut version = good.clone();
    version[4] = 9;
    assert!(matches!(decode_binary(&version), Err(Error::UnsupportedVersion(9))));
    let mut trailing = good;
    trailing.push(0);
    assert!(matches!(decode_binary(&trailing), Err(Error::ShapeMismatch(_))));
}

#[test]
fn ragged_and_non_numeric_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "dim_0,dim_1\n1,2\n3\n").unwrap();
    assert!(matches!(read_embeddings(&ragged), Err(Error::RaggedCsv { line: 3, expected: 2, found: 1 })));
    let word = dir.path().join("word.csv");
    fs::write(&word, "dim_0\n1.5\nabc\n").unwrap();
    assert!(matches!(read_embeddings(&word), Err(Error::BadNumber { line: 3, .. })));
}

#[test]
fn labels_are_densely_remapped() {
    let single = parse_labels("label\n3\n3\n").unwrap();
    assert_eq!(single.labels.values(), &[0, 0]);
    assert_eq!(single.mapping.get(&3), Some(&0));
    let pair = parse_labels("label\n5\n5\n7\n").unwrap();
    assert_eq!(pair.labels.values(), &[0, 0, 1]);
    assert_eq!(pair.labels.classes(), 2);
    let gaps = parse_labels("label\n10\n2\n40\n2\n").unwrap();
    assert_eq!(gaps.labels.values(), &[1, 0, 2, 0]);
}

#[test]
fn non_integer_labels_are_rejected() {
    for text in ["label\n1\n2.5\n", "label\n-1\n", "label\nfoo\n"] {
        assert!(matches!(parse_labels(text), Err(Error::NonIntegerLabel { line: 2 | 3, .. })), "{text}");
    }
}

#[test]
fn label_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_labels(&path, &[1, 0, 2, 2]).unwrap();
    assert_eq!(read_labels(&path).unwrap().labels.values(), &[1, 0, 2, 2]);
}

#[test]
fn config_rejects_unknown_keys_at_every_level() {
    let base = r#"{"data": {"synthetic": {"n": 200}}, "output_dir": "out"}"#;
    assert!(RunConfig::from_json(base).is_ok());
    let cases = [
        r#"{"data": {"synthetic": {"n": 200}}, "output_dir": "out", "stepz": 3}"#,
        r#"{"data": {"synthetic": {"n": 200, "colour": 1}}, "output_dir": "out"}"#,
        r#"{"data": {"synthetic": {}}, "output_dir": "out", "erasure": {"stpes": 2}}"#,
        r#"{"data": {"synthetic": {}}, "output_dir": "out", "erasure": {"encoder": {"lr": 1}}}"#,
        r#"{"data": {"synthetic": {}}, "output_dir": "out", "probes": {"seed": 1, "extra": true}}"#,
    ];
    for text in cases {
        assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn config_paths_resolve_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"data": {"files": {"embeddings": "x.oblv", "attribute": "s.csv"}}, "output_dir": "out"}"#,
    )
    .unwrap();
    let config = RunConfig::load(&path).unwrap();
    assert_eq!(config.output_dir, dir.path().join("out"));
    match config.data {
        kerase::config::DataSource::Files { embeddings, target, .. } => {
            assert_eq!(embeddings, dir.path().join("x.oblv"));
            assert_eq!(target, None);
        }
        other => panic!("unexpected source {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_encoding_round_trips(rows in 0usize..6, cols in 0usize..6, values in prop::collection::vec(any::<f64>(), 36)) {
        let m = Matrix::from_fn(rows, cols, |i, j| values[i * 6 + j]);
        let back = decode_binary(&encode_binary(&m)).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
