mod common;

use std::fs;
use std::path::Path;

use common::*;
use ndarray::{array, Array1};
use tfcl::data::{
    filter_min_minority, generate_simulated, load_dataset, load_ground_truth, read_matrix_csv,
    save_dataset, save_ground_truth, top_k_labels, write_matrix_csv, BlockSpec, SimulatedSpec,
};
use tfcl::losses::user_auc;
use tfcl::personalized::mean_auc;
use tfcl::TfclError;

fn tiny_spec(seed: u64, noise: f64) -> SimulatedSpec {
    SimulatedSpec {
        users: 5,
        features: 4,
        samples_per_user: 30,
        blocks: vec![
            BlockSpec {
                features: 1,
                tasks: 2,
                centroid_max: 3.0,
            },
            BlockSpec {
                features: 3,
                tasks: 3,
                centroid_max: 6.0,
            },
        ],
        block_sd: 1.0,
        score_noise_sd: noise,
        positives_per_user: 10,
        seed,
    }
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn parse_line(err: TfclError) -> usize {
    match err {
        TfclError::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn dataset_csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate_simulated(&tiny_spec(3, 0.1)).unwrap();
    let path = dir.path().join("d.csv");
    save_dataset(&data, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.ids(), data.ids());
    for (a, b) in back.tasks().iter().zip(data.tasks()) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }
    let again = dir.path().join("e.csv");
    save_dataset(&back, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn interleaved_users_and_quoted_ids_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "d.csv",
        "user_id,label,f_0\n\"a,b\",1,0.5\nz,-1,2\n\"a,b\",-1,-1e-3\nz,1,3\n",
    );
    let data = load_dataset(&p).unwrap();
    assert_eq!(data.ids(), ["a,b".to_string(), "z".to_string()]);
    assert_eq!(data.tasks()[0].x.column(0).to_vec(), vec![0.5, -1e-3]);
    assert_eq!(data.tasks()[1].y.to_vec(), vec![-1.0, 1.0]);
    let out = dir.path().join("o.csv");
    save_dataset(&data, &out).unwrap();
    assert_eq!(load_dataset(&out).unwrap().ids(), data.ids());
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("user_id,label,f_0\nu,1,0\nu,-1,abc\n", 3),
        ("user_id,label,f_0\nu,1,0\nu,0,1\n", 3),
        ("user_id,label,f_0\nu,1,0\nu,-1,1\nv,2,1\n", 4),
        ("user_id,label,f_0,f_1\nu,1,0,1\nu,-1,1\n", 3),
        ("user_id,label,f_0\nu,1,inf\n", 2),
        ("user_id,label,f_0\n,1,0\n", 2),
    ];
    for (i, (text, line)) in cases.into_iter().enumerate() {
        let p = write(dir.path(), &format!("bad{i}.csv"), text);
        let err = load_dataset(&p).unwrap_err();
        assert_eq!(parse_line(err), line, "case {i}");
    }
}

#[test]
fn unknown_columns_and_empty_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown.csv", "user_id,label,f_0,extra\nu,1,0,0\n"),
        ("gap.csv", "user_id,label,f_1\nu,1,0\n"),
        ("order.csv", "label,user_id,f_0\n1,u,0\n"),
        ("nofeat.csv", "user_id,label\nu,1\n"),
        ("header_only.csv", "user_id,label,f_0\n"),
        ("empty.csv", ""),
    ] {
        let p = write(dir.path(), name, text);
        assert!(load_dataset(&p).is_err(), "{name} should fail");
    }
    assert!(load_dataset(dir.path().join("missing.csv")).is_err());
}

#[test]
fn matrix_csv_round_trip_and_ragged_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = array![[1.0, -2.5e-17, 3.0], [0.1 + 0.2, f64::MIN_POSITIVE, -0.0]];
    let p = dir.path().join("m.csv");
    write_matrix_csv(&p, &m).unwrap();
    let back = read_matrix_csv(&p).unwrap();
    assert_eq!(back.dim(), m.dim());
    for (a, b) in back.iter().zip(m.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let ragged = write(dir.path(), "r.csv", "1,2\n3\n");
    assert!(read_matrix_csv(&ragged).is_err());
}

#[test]
fn ground_truth_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = generate_simulated(&tiny_spec(9, 0.1)).unwrap();
    let p = dir.path().join("truth.json");
    save_ground_truth(&gt, &p).unwrap();
    assert!(dir.path().join("truth_w_star.csv").exists());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(doc["d"], 4);
    assert_eq!(doc["T"], 5);
    assert_eq!(doc["blocks"][0]["features"], serde_json::json!([0]));
    assert_eq!(doc["blocks"][1]["tasks"], serde_json::json!([2, 3, 4]));
    let back = load_ground_truth(&p).unwrap();
    assert_eq!(back.w_star, gt.w_star);
    assert_eq!(back.feature_block, gt.feature_block);
    assert_eq!(back.task_block, gt.task_block);
    assert_eq!(back.group_sizes(), vec![3, 6]);
}

#[test]
fn ground_truth_rejects_uncovered_nodes() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix_csv(dir.path().join("w.csv"), &array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let p = write(
        dir.path(),
        "gt.json",
        r#"{"d":2,"T":2,"blocks":[{"features":[0],"tasks":[0]}],"w_star_path":"w.csv"}"#,
    );
    assert!(load_ground_truth(&p).is_err());
    let p = write(
        dir.path(),
        "gt2.json",
        r#"{"d":3,"T":2,"blocks":[{"features":[0,1,2],"tasks":[0,1]}],"w_star_path":"w.csv"}"#,
    );
    assert!(load_ground_truth(&p).is_err());
}

#[test]
fn generation_is_deterministic_per_seed() {
    let (a, ga) = generate_simulated(&tiny_spec(5, 0.1)).unwrap();
    let (b, gb) = generate_simulated(&tiny_spec(5, 0.1)).unwrap();
    let (c, _) = generate_simulated(&tiny_spec(6, 0.1)).unwrap();
    assert_eq!(ga.w_star, gb.w_star);
    for (x, y) in a.tasks().iter().zip(b.tasks()) {
        assert_eq!(x.x, y.x);
        assert_eq!(x.y, y.y);
    }
    assert_ne!(a.tasks()[0].x, c.tasks()[0].x);
}

#[test]
fn generated_users_have_fixed_positive_count() {
    let spec = tiny_spec(1, 0.1);
    let (data, gt) = generate_simulated(&spec).unwrap();
    assert_eq!((data.d(), data.t()), (4, 5));
    assert_eq!(data.ids()[4], "user_4");
    for task in data.tasks() {
        assert_eq!(task.n(), 30);
        assert_eq!(task.n_pos(), 10);
    }
    assert_eq!(gt.block_count(), 2);
    assert!(generate_simulated(&SimulatedSpec {
        positives_per_user: 30,
        ..spec.clone()
    })
    .is_err());
    assert!(generate_simulated(&SimulatedSpec { users: 6, ..spec }).is_err());
}

#[test]
fn noiseless_labels_are_top_scores_of_the_truth() {
    let (data, gt) = generate_simulated(&tiny_spec(2, 0.0)).unwrap();
    for (j, task) in data.tasks().iter().enumerate() {
        let scores = task.x.dot(&gt.w_star.column(j));
        assert_eq!(top_k_labels(&scores, 10), task.y);
        assert_eq!(user_auc(scores.view(), task.y.view()), Some(1.0));
    }
    assert_eq!(mean_auc(gt.w_star.view(), &data).unwrap(), 1.0);
}

#[test]
fn top_k_breaks_ties_by_index() {
    let s = array![1.0, 3.0, 3.0, 0.0, 3.0];
    assert_eq!(top_k_labels(&s, 2), array![-1.0, 1.0, 1.0, -1.0, -1.0]);
    assert_eq!(top_k_labels(&s, 0), Array1::from_elem(5, -1.0));
}

#[test]
fn user_auc_hand_values() {
    let y = array![-1.0, -1.0, 1.0, 1.0];
    assert_eq!(
        user_auc(array![0.1, 0.4, 0.35, 0.8].view(), y.view()),
        Some(0.75)
    );
    assert_eq!(
        user_auc(array![0.0, 0.0, 0.0, 0.0].view(), y.view()),
        Some(0.5)
    );
    assert_eq!(
        user_auc(array![0.1, 0.4, 0.4, 0.8].view(), y.view()),
        Some(0.875)
    );
    assert_eq!(
        user_auc(array![1.0, 2.0].view(), array![1.0, 1.0].view()),
        None
    );
}

#[test]
fn minority_filter_keeps_order_and_ids() {
    let mut r = rng(4);
    let mk = |r: &mut rand_chacha::ChaCha8Rng, pos: usize, neg: usize| {
        let y = Array1::from_iter((0..pos + neg).map(|i| if i < pos { 1.0 } else { -1.0 }));
        tfcl::Task::new(gaussian(r, pos + neg, 2), y).unwrap()
    };
    let tasks = vec![mk(&mut r, 8, 20), mk(&mut r, 3, 20), mk(&mut r, 20, 8)];
    let data =
        tfcl::MultiTaskDataset::with_ids(tasks, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let kept = filter_min_minority(&data, 8).unwrap();
    assert_eq!(kept.ids(), ["a".to_string(), "c".to_string()]);
    assert!(filter_min_minority(&data, 21).is_err());
}
