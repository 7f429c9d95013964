use std::io::Write;

use labcvar::bench::{self, ExperimentConfig};
use labcvar::data::{downsample_exponential, exponential_profile, load_csv, synth_gaussian_longtail, LabeledDataset, SynthConfig};
use labcvar::losses::LossSpec;
use labcvar::model::TrainConfig;
use labcvar::numerics::{Matrix, RngState};
use labcvar::Error;

fn balanced(classes: usize, per_class: usize) -> LabeledDataset {
    let n = classes * per_class;
    let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
    let y = (0..n).map(|i| i % classes).collect();
    LabeledDataset::new("balanced", x, y, classes).unwrap()
}

#[test]
fn ten_class_profile() {
    let ds = balanced(10, 500);
    let out = downsample_exponential(&ds, 100.0, &mut RngState::new(1)).unwrap();
    assert_eq!(out.class_counts()[0], 5);
    assert_eq!(out.class_counts()[9], 500);
    let lambda = 100f64.powf(-1.0 / 9.0);
    for (j, &c) in out.class_counts().iter().enumerate() {
        assert_eq!(c, (lambda.powi(9 - j as i32) * 500.0).round() as usize);
    }
}

#[test]
fn ratio_one_is_identity() {
    let ds = balanced(4, 20);
    let out = downsample_exponential(&ds, 1.0, &mut RngState::new(2)).unwrap();
    assert_eq!(out, ds);
}

#[test]
fn realized_ratio_within_rounding() {
    for (classes, n0, ratio) in [(5, 200, 10.0), (10, 1000, 50.0), (3, 90, 7.0), (8, 300, 100.0)] {
        let c = exponential_profile(n0, classes, ratio).unwrap();
        let n1 = c[0] as f64;
        let realized = c[classes - 1] as f64 / n1;
        assert!(realized >= ratio * (1.0 - 2.0 / n1) && realized <= ratio * (1.0 + 2.0 / n1));
    }
}

#[test]
fn removed_rows_depend_on_rng() {
    let ds = balanced(3, 100);
    let a = downsample_exponential(&ds, 10.0, &mut RngState::new(1)).unwrap();
    let b = downsample_exponential(&ds, 10.0, &mut RngState::new(2)).unwrap();
    assert_eq!(a.class_counts(), b.class_counts());
    assert_ne!(a.features(), b.features());
}

#[test]
fn too_extreme_ratio_errors() {
    let ds = balanced(10, 20);
    assert!(matches!(
        downsample_exponential(&ds, 1000.0, &mut RngState::new(1)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn synthetic_histogram_matches_formula() {
    let cfg = SynthConfig::default();
    let (tr, _) = synth_gaussian_longtail(&cfg, 100.0, 1).unwrap();
    assert_eq!(tr.class_counts(), exponential_profile(cfg.head_size, cfg.classes, 100.0).unwrap().as_slice());
    let mut bad = cfg.clone();
    bad.sigma = 0.0;
    assert!(synth_gaussian_longtail(&bad, 100.0, 1).is_err());
}

#[test]
fn balanced_synthetic_is_easy() {
    let cfg = ExperimentConfig {
        dataset: bench::DatasetSpec::Synthetic(SynthConfig {
            separation: 6.0,
            ..SynthConfig::default()
        }),
        ratio: Some(1.0),
        losses: vec![LossSpec::Erm],
        seeds: vec![0],
        train: TrainConfig {
            epochs: 10,
            lr_decay_epochs: vec![8],
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let res = bench::run(&cfg).unwrap();
    assert!(res.summaries[0].ber.mean < 0.05, "{}", res.summaries[0].ber.mean);
}

fn csv_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn csv_round_trip_and_reindex() {
    let f = csv_file("1.5,2.0,0\n-3.0,4.25,1\n0.0,1e-3,1\n");
    let (ds, names) = load_csv(f.path(), false).unwrap();
    assert_eq!(ds.features().as_slice(), &[1.5, 2.0, -3.0, 4.25, 0.0, 1e-3]);
    assert_eq!(names, vec!["0", "1"]);

    let mut text = String::new();
    for (label, count) in [(0, 5), (1, 2), (2, 9)] {
        for i in 0..count {
            text.push_str(&format!("{i},{label}\n"));
        }
    }
    let (ds, names) = load_csv(csv_file(&text).path(), false).unwrap();
    assert_eq!(ds.class_counts(), &[2, 5, 9]);
    assert_eq!(names, vec!["1", "0", "2"]);
}

#[test]
fn malformed_row_seven() {
    let mut text = String::from("x,y,label\n");
    for i in 0..5 {
        text.push_str(&format!("{i},{i},0\n"));
    }
    text.push_str("1,abc,1\n");
    match load_csv(csv_file(&text).path(), true) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("{other:?}"),
    }
}

#[test]
fn csv_dataset_through_the_bench() {
    let mut rng = RngState::new(3);
    let mut train = String::new();
    for i in 0..300 {
        let y = i % 3;
        train.push_str(&format!("{},{},{}\n", y as f64 + 0.3 * rng.normal(), rng.normal(), y));
    }
    let mut val = String::new();
    for i in 0..60 {
        let y = i % 3;
        val.push_str(&format!("{},{},{}\n", y as f64 + 0.3 * rng.normal(), rng.normal(), y));
    }
    let (tf, vf) = (csv_file(&train), csv_file(&val));
    let cfg = ExperimentConfig {
        dataset: bench::DatasetSpec::Csv {
            train: tf.path().to_path_buf(),
            validation: vf.path().to_path_buf(),
            has_header: false,
        },
        ratio: Some(10.0),
        losses: vec![LossSpec::Erm],
        seeds: vec![0],
        train: TrainConfig {
            epochs: 2,
            lr_decay_epochs: vec![],
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let (tr, _) = cfg.datasets(0).unwrap();
    assert_eq!(tr.class_counts(), &[10, 32, 100]);
    let res = bench::run(&cfg).unwrap();
    assert_eq!(res.runs.len(), 1);
}
