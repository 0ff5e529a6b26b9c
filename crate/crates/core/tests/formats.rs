use std::path::Path;

use cmta::data::{cmtm, generate_synthetic_cohort, load_cohort, save_cohort, Matrix, SyntheticSpec};
use cmta::model::{encode_checkpoint, load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use cmta::CmtaError;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        n_patients: 7,
        min_patches: 1,
        max_patches: 5,
        pathology_width: 9,
        genomic_widths: vec![4, 2],
        seed: 21,
        ..SyntheticSpec::default()
    }
}

fn cfg() -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        landmarks: 4,
        pathology_width: 9,
        genomic_widths: vec![4, 2],
        mlp_hidden: 8,
        ..ModelConfig::default()
    }
}

fn write_line(dir: &Path, lines: &[String]) -> std::path::PathBuf {
    let p = dir.join("manifest.jsonl");
    std::fs::write(&p, lines.join("\n")).unwrap();
    p
}

fn entry(id: &str, path: &str, genomics: &[&str]) -> String {
    serde_json::json!({
        "patient_id": id,
        "time_months": 3.5,
        "censored": false,
        "pathology_file": path,
        "genomics_files": genomics,
    })
    .to_string()
}

#[test]
fn cohort_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate_synthetic_cohort(&spec()).unwrap();
    let manifest = save_cohort(&cohort, dir.path()).unwrap();
    let back = load_cohort(&manifest).unwrap();
    assert_eq!(back.records(), cohort.records());
    for (a, b) in back.records().iter().zip(cohort.records()) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.pathology.data), bits(&b.pathology.data));
        assert_eq!(a.time_months.to_bits(), b.time_months.to_bits());
    }
    let again = dir.path().join("again");
    let m2 = save_cohort(&back, &again).unwrap();
    assert_eq!(std::fs::read(&manifest).unwrap(), std::fs::read(m2).unwrap());
}

#[test]
fn three_row_fixture_gives_three_patches() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..3 * 1024).map(|i| (i % 17) as f64 * 0.25).collect();
    cmtm::write_matrix(&dir.path().join("p.cmtm"), &Matrix::new(3, 1024, data.clone()).unwrap()).unwrap();
    cmtm::write_matrix(&dir.path().join("g.cmtm"), &Matrix::new(1, 5, vec![1.0; 5]).unwrap()).unwrap();
    let m = write_line(dir.path(), &[entry("A", "p.cmtm", &["g.cmtm"])]);
    let c = load_cohort(&m).unwrap();
    assert_eq!(c.records()[0].pathology.rows, 3);
    assert_eq!(c.records()[0].pathology.data, data);
    assert_eq!(c.pathology_width(), 1024);
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    cmtm::write_matrix(&dir.path().join("p.cmtm"), &Matrix::new(2, 3, vec![0.5; 6]).unwrap()).unwrap();
    cmtm::write_matrix(&dir.path().join("g.cmtm"), &Matrix::new(1, 2, vec![1.0; 2]).unwrap()).unwrap();

    let m = write_line(dir.path(), &["".into(), "  ".into()]);
    assert!(matches!(load_cohort(&m), Err(CmtaError::Empty(_))));

    let good = entry("A", "p.cmtm", &["g.cmtm"]);
    let m = write_line(dir.path(), &[good.clone(), entry("A", "p.cmtm", &["g.cmtm"])]);
    assert!(matches!(load_cohort(&m), Err(CmtaError::Integrity(_))));

    let m = write_line(dir.path(), &[good.clone(), "{not json".into()]);
    match load_cohort(&m) {
        Err(CmtaError::Format { offset, .. }) => assert_eq!(offset as usize, good.len() + 1),
        other => panic!("{other:?}"),
    }

    let m = write_line(dir.path(), &[entry("B", "missing.cmtm", &["g.cmtm"])]);
    assert!(matches!(load_cohort(&m), Err(CmtaError::Io(_))));

    let m = write_line(dir.path(), &[good.replace("\"censored\"", "\"extra\":1,\"censored\"")]);
    assert!(matches!(load_cohort(&m), Err(CmtaError::Format { .. })));

    let m = write_line(dir.path(), &[good.replace("3.5", "-1.0")]);
    assert!(load_cohort(&m).is_err());
}

#[test]
fn matrix_corruptions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cmtm");
    let bytes = cmtm::encode(&Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let cases: Vec<(Vec<u8>, &str)> = vec![
        ([b"XMTM".as_slice(), &bytes[4..]].concat(), "magic"),
        (bytes[..bytes.len() - 3].to_vec(), "truncated"),
        (bytes[..7].to_vec(), "header"),
        ([bytes.as_slice(), &[0u8]].concat(), "trailing"),
    ];
    for (b, what) in cases {
        std::fs::write(&path, &b).unwrap();
        let e = cmtm::read_matrix(&path).unwrap_err();
        assert!(matches!(e, CmtaError::Format { .. }), "{what}: {e:?}");
        assert!(e.to_string().contains("at byte"), "{what}: {e}");
    }
    let mut nan = bytes.clone();
    nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&path, &nan).unwrap();
    assert!(matches!(cmtm::read_matrix(&path), Err(CmtaError::Integrity(_))));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let params = ModelParams::init(&cfg(), 5).unwrap();
    save_checkpoint(&path, &cfg(), &params).unwrap();
    let (c2, p2) = load_checkpoint(&path).unwrap();
    assert_eq!(c2, cfg());
    for ((n1, t1), (n2, t2)) in params.named().iter().zip(p2.named()) {
        assert_eq!(n1, &n2);
        assert_eq!(t1.shape(), t2.shape());
        assert!(t1.values().iter().zip(t2.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(std::fs::read(&path).unwrap(), encode_checkpoint(&c2, &p2).unwrap());
}

#[test]
fn checkpoint_corruptions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let bytes = encode_checkpoint(&cfg(), &ModelParams::init(&cfg(), 5).unwrap()).unwrap();
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
    let cases: Vec<(Vec<u8>, fn(&CmtaError) -> bool)> = vec![
        ([b"ATMC".as_slice(), &bytes[4..]].concat(), |e| matches!(e, CmtaError::Format { offset: 0, .. })),
        (bytes[..bytes.len() / 2].to_vec(), |e| matches!(e, CmtaError::Format { .. })),
        ([bytes.as_slice(), b"x"].concat(), |e| matches!(e, CmtaError::Format { .. })),
        (nan, |e| matches!(e, CmtaError::Integrity(_))),
    ];
    for (i, (b, ok)) in cases.into_iter().enumerate() {
        std::fs::write(&path, &b).unwrap();
        let e = load_checkpoint(&path).unwrap_err();
        assert!(ok(&e), "case {i}: {e:?}");
    }
}
