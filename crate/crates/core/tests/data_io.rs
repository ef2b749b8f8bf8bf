use std::collections::HashSet;
use std::io::Cursor;

use adb_core::boundary::{AdbModel, BoundaryParams, BoundaryTrainConfig, Centroids};
use adb_core::data_io::{
    generate_synthetic, load_dataset, load_model, make_known_open_split, mean_pool,
    model_from_json, model_to_json, read_csv, read_jsonl, save_dataset_csv, save_model,
    subsample_labeled, synthetic_centers, DataFormat, EmbeddedDataset, LabelMap, SplitConfig,
    SyntheticConfig, OPEN_LABEL,
};
use adb_core::error::AdbError;
use proptest::prelude::*;

fn synth(n_classes: usize, per_class: usize, seed: u64) -> EmbeddedDataset {
    generate_synthetic(&SyntheticConfig {
        n_classes,
        per_class,
        dim: 3,
        centroid_scale: 5.0,
        noise_sigma: 1.0,
        seed,
    })
    .unwrap()
}

fn sample_model() -> AdbModel {
    let centroids = Centroids::new(vec![vec![0.0, 1.0], vec![3.5, -2.25]], vec![10, 12]).unwrap();
    let labels = LabelMap::new(vec!["alpha".into(), "beta".into()]).unwrap();
    let cfg = BoundaryTrainConfig {
        seed: 17,
        ..Default::default()
    };
    AdbModel::new(centroids, BoundaryParams::new(vec![-0.3, 1.7]), labels, cfg).unwrap()
}

#[test]
fn model_round_trips_exactly() {
    let model = sample_model();
    let back = model_from_json(&model_to_json(&model).unwrap()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.radii(), model.radii());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

type Edit = Box<dyn FnOnce(&mut serde_json::Value)>;

fn edit_model(f: impl FnOnce(&mut serde_json::Value)) -> Result<AdbModel, AdbError> {
    let mut v: serde_json::Value =
        serde_json::from_str(&model_to_json(&sample_model()).unwrap()).unwrap();
    f(&mut v);
    model_from_json(&v.to_string())
}

#[test]
fn malformed_models_are_rejected() {
    let cases: Vec<(&str, Edit)> = vec![
        (
            "short radii",
            Box::new(|v| v["radii"] = serde_json::json!([0.5])),
        ),
        (
            "negative radius",
            Box::new(|v| v["radii"][0] = serde_json::json!(-1.0)),
        ),
        (
            "stale radius",
            Box::new(|v| v["radii"][1] = serde_json::json!(9.0)),
        ),
        (
            "version",
            Box::new(|v| v["format_version"] = serde_json::json!(99)),
        ),
        (
            "centroid dim",
            Box::new(|v| v["centroids"][0] = serde_json::json!([1.0])),
        ),
        ("seed", Box::new(|v| v["seed"] = serde_json::json!(3))),
        (
            "missing key",
            Box::new(|v| drop(v.as_object_mut().unwrap().remove("delta_hat"))),
        ),
    ];
    for (name, edit) in cases {
        match edit_model(edit) {
            Err(AdbError::ModelFormat(_)) => {}
            other => panic!("{name}: expected a format error, got {other:?}"),
        }
    }
    assert!(model_from_json("not json").is_err());
}

#[test]
fn csv_and_jsonl_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "label,f0,f1\na,1,2\nb,3,4\nopen,5,6\n").unwrap();
    let d = load_dataset(&csv, DataFormat::from_path(&csv)).unwrap();
    assert_eq!(d.dim, 2);
    assert_eq!(d.label_map.names(), ["a", "b"]);
    assert_eq!(d.open_count(), 1);

    let jsonl = dir.path().join("d.jsonl");
    std::fs::write(
        &jsonl,
        "{\"label\":\"a\",\"vector\":[1,2]}\n\n{\"label\":\"b\",\"tokens\":[[0,0],[2,4]]}\n",
    )
    .unwrap();
    let d = load_dataset(&jsonl, DataFormat::from_path(&jsonl)).unwrap();
    assert_eq!(d.records[1].vector, vec![1.0, 2.0]);

    let out = dir.path().join("out.csv");
    let original = synth(3, 4, 2);
    save_dataset_csv(&original, &out).unwrap();
    assert_eq!(load_dataset(&out, DataFormat::Csv).unwrap(), original);
}

#[test]
fn bad_rows_name_their_line() {
    let err = read_csv(Cursor::new("label,f0,f1\na,1,2\nb,3\n")).unwrap_err();
    assert!(
        matches!(err, AdbError::DimensionMismatch { line: Some(3), .. }),
        "{err:?}"
    );
    let err = read_csv(Cursor::new("label,f0\na,x\n")).unwrap_err();
    assert!(matches!(err, AdbError::Parse { line: 2, .. }), "{err:?}");
    assert!(read_jsonl(Cursor::new("{\"label\":\"a\"}\n")).is_err());
    assert!(load_dataset("/nonexistent/file.csv", DataFormat::Csv).is_err());
}

#[test]
fn split_is_deterministic_and_partitions_known_records() {
    let data = synth(6, 20, 1);
    let cfg = SplitConfig {
        seed: 42,
        ..Default::default()
    };
    let a = make_known_open_split(&data, &cfg).unwrap();
    assert_eq!(a, make_known_open_split(&data, &cfg).unwrap());
    assert_eq!(a.known_classes.len(), 3);

    let known: HashSet<&str> = a.known_classes.iter().map(String::as_str).collect();
    let mut seen = Vec::new();
    for part in [&a.train, &a.validation, &a.test] {
        for r in &part.records {
            if r.label != OPEN_LABEL {
                assert!(known.contains(r.label.as_str()));
                seen.push(r.vector.clone());
            }
        }
    }
    let expected: Vec<_> = data
        .records
        .iter()
        .filter(|r| known.contains(r.label.as_str()))
        .map(|r| r.vector.clone())
        .collect();
    assert_eq!(seen.len(), expected.len());
    let mut seen_sorted = seen;
    let mut expected_sorted = expected;
    let key = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    seen_sorted.sort_by_key(key);
    expected_sorted.sort_by_key(key);
    assert_eq!(seen_sorted, expected_sorted);
    assert!(a.train.records.iter().all(|r| r.label != OPEN_LABEL));
    assert!(a.test.open_count() > 0);
}

#[test]
fn other_seeds_pick_other_classes() {
    let data = synth(10, 10, 0);
    let picks: HashSet<Vec<String>> = (0..10)
        .map(|seed| {
            let cfg = SplitConfig {
                seed,
                ..Default::default()
            };
            make_known_open_split(&data, &cfg).unwrap().known_classes
        })
        .collect();
    assert!(picks.len() > 1);
}

#[test]
fn subsampling_keeps_every_class() {
    let data = synth(4, 25, 3);
    let sub = subsample_labeled(&data, 0.2, 9).unwrap();
    assert_eq!(sub.class_counts(), vec![5; 4]);
    let tiny = subsample_labeled(&data, 0.01, 9).unwrap();
    assert_eq!(tiny.class_counts(), vec![1; 4]);
    assert_eq!(subsample_labeled(&data, 1.0, 9).unwrap(), data);
    assert!(subsample_labeled(&data, 0.0, 9).is_err());
}

#[test]
fn synthetic_generation_is_reproducible() {
    let cfg = SyntheticConfig {
        n_classes: 12,
        per_class: 3,
        dim: 2,
        centroid_scale: 4.0,
        noise_sigma: 0.5,
        seed: 8,
    };
    let a = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, generate_synthetic(&cfg).unwrap());
    assert_eq!(a.len(), 36);
    assert_eq!(a.label_map.names()[0], "c00");
    assert_eq!(synthetic_centers(&cfg).unwrap().len(), 12);
    assert!(generate_synthetic(&SyntheticConfig {
        n_classes: 1,
        ..cfg
    })
    .is_err());
}

proptest! {
    #[test]
    fn mean_pool_is_linear(
        a in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..6),
        b in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..6),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let mixed: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| alpha * u + beta * v).collect())
            .collect();
        let lhs = mean_pool(&mixed).unwrap();
        let (pa, pb) = (mean_pool(a).unwrap(), mean_pool(b).unwrap());
        for i in 0..4 {
            prop_assert!((lhs[i] - (alpha * pa[i] + beta * pb[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn split_sizes_obey_the_partition_law(
        classes in 2usize..8,
        per_class in 3usize..40,
        known_ratio in 0.2f64..1.0,
        seed in any::<u64>(),
    ) {
        let data = synth(classes, per_class, seed);
        let cfg = SplitConfig { known_ratio, seed, ..Default::default() };
        let s = make_known_open_split(&data, &cfg).unwrap();
        let m = s.manifest();
        let n_known = s.known_classes.len();
        prop_assert_eq!(n_known + s.open_classes.len(), classes);
        prop_assert!(n_known >= 1);
        prop_assert_eq!(
            m.counts.train + m.counts.validation + m.counts.test_known,
            n_known * per_class
        );
        prop_assert!(s.train.class_counts().iter().all(|&c| c >= 1));
        prop_assert!(s.validation.class_counts().iter().all(|&c| c >= 1));
        prop_assert!(m.counts.test_known >= n_known);
        prop_assert!(m.counts.test_open <= s.open_classes.len() * per_class);
    }
}
