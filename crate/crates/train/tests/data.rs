use std::io::Write;

use dmlbench_core::eval::recall_at_k_self;
use dmlbench_train::*;
use flate2::write::GzEncoder;
use flate2::Compression;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn two_rows_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_feature_csv(write(&dir, "a.csv", "label,f0,f1\n3,0.5,1\n7,-2,1e-3\n")).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dim(), 2);
    assert_eq!(ds.class_index(), &vec![vec![0], vec![1]]);
    assert_eq!(ds.features()[[1, 1]], 1e-3);
}

#[test]
fn labels_are_remapped_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_feature_csv(write(&dir, "a.csv", "label,f0\n9,0\n5,1\n9,2\n10,3\n")).unwrap();
    assert_eq!(ds.labels(), &[1, 0, 1, 2]);
    assert_eq!(ds.label_names(), &["5", "9", "10"]);
}

#[test]
fn short_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_feature_csv(write(&dir, "a.csv", "label,f0,f1\n0,1,2\n1,3\n")).unwrap_err();
    match err {
        TrainError::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn bad_cells_and_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_feature_csv(write(&dir, "a.csv", "label,f0\n0,1\n1,abc\n")).unwrap_err();
    assert!(matches!(err, TrainError::Parse { line: 3, .. }), "{err}");
    let err = load_feature_csv(write(&dir, "b.csv", "label,f0\n")).unwrap_err();
    assert!(matches!(err, TrainError::Parse { .. }));
    let err = load_feature_csv(write(&dir, "c.csv", "label,x\n0,1\n")).unwrap_err();
    assert!(matches!(err, TrainError::Parse { line: 1, .. }));
}

#[test]
fn gzip_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv.gz");
    let mut enc = GzEncoder::new(std::fs::File::create(&path).unwrap(), Compression::default());
    enc.write_all(b"label,f0\na,1\nb,2\na,3\n").unwrap();
    enc.finish().unwrap();
    let ds = load_feature_csv(&path).unwrap();
    assert_eq!(ds.labels(), &[0, 1, 0]);
    assert_eq!(ds.features()[[2, 0]], 3.0);
}

#[test]
fn synthetic_is_deterministic() {
    let spec = SyntheticSpec { seed: 11, ..Default::default() };
    assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    let other = gen_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(gen_synthetic(&spec).unwrap().features(), other.features());
}

fn mean_centre_distance(spread: f64, seeds: std::ops::Range<u64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for seed in seeds {
        let spec = SyntheticSpec {
            n_classes: 10,
            samples_per_class: 1,
            input_dim: 16,
            center_spread: spread,
            noise_sigma: 0.0,
            seed,
        };
        let x = gen_synthetic(&spec).unwrap().features().clone();
        for i in 0..10 {
            for j in i + 1..10 {
                total += (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn centre_distances_scale_linearly() {
    let base = mean_centre_distance(1.0, 0..40);
    for spread in [0.5, 3.0, 10.0] {
        let ratio = mean_centre_distance(spread, 100..140) / (spread * base);
        assert!((ratio - 1.0).abs() < 0.1, "spread {spread}: ratio {ratio}");
    }
}

#[test]
fn well_separated_raw_features_are_perfectly_retrievable() {
    let ds = gen_synthetic(&SyntheticSpec {
        n_classes: 8,
        samples_per_class: 20,
        input_dim: 16,
        center_spread: 20.0,
        noise_sigma: 1.0,
        seed: 3,
    })
    .unwrap();
    let spec = EncoderSpec { kind: EncoderKind::Identity, ..EncoderSpec::linear(16, 16, 0) };
    let (emb, _) = dmlbench_train::encoder::forward(&spec, &spec.init_params().unwrap(), ds.features().view()).unwrap();
    assert_eq!(&emb, ds.features());
    let r = recall_at_k_self(&ds.as_batch().unwrap(), &[1]).unwrap();
    assert_eq!(r.recall_at[&1], 1.0);
}

#[test]
fn split_conventions() {
    let ds = gen_synthetic(&SyntheticSpec { n_classes: 200, samples_per_class: 2, input_dim: 2, ..Default::default() })
        .unwrap();
    let (tr, te) = split_disjoint_classes(&ds, &SplitSpec::FirstHalfClasses).unwrap();
    assert_eq!((tr.n_classes(), te.n_classes()), (100, 100));
    assert_eq!(tr.label_names()[99], "99");
    assert_eq!(te.label_names()[0], "100");

    for spec in [
        SplitSpec::FirstHalfClasses,
        SplitSpec::Fraction { train_fraction: 0.3 },
        SplitSpec::ExplicitClassLists { train: vec![5, 1, 7], test: vec![0, 199] },
    ] {
        let (tr, te) = split_disjoint_classes(&ds, &spec).unwrap();
        let a: Vec<&String> = tr.label_names().iter().collect();
        assert!(te.label_names().iter().all(|n| !a.contains(&n)));
        for side in [&tr, &te] {
            let mut ids: Vec<usize> = side.class_index().iter().flatten().copied().collect();
            ids.sort_unstable();
            assert_eq!(ids, (0..side.len()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn load_then_split_conserves_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("label,f0,f1\n");
    for i in 0..37 {
        text.push_str(&format!("{},{},{}\n", (i * 7) % 6, i, -i));
    }
    let ds = load_feature_csv(write(&dir, "a.csv", &text)).unwrap();
    let (tr, te) = split_disjoint_classes(&ds, &SplitSpec::FirstHalfClasses).unwrap();
    assert_eq!(tr.len() + te.len(), 37);
    assert_eq!((tr.n_classes(), te.n_classes()), (3, 3));
}
