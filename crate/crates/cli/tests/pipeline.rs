//! End-to-end tests of the `speakergraph` binary: the synth → ingest →
//! build-graph → train → predict → eval pipeline, the exit-code contract,
//! determinism of artifacts, and the report-only subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_speakergraph"))
}

/// Run the binary with `args`, returning (exit code, stdout, stderr).
fn run(args: &[&str]) -> (i32, String, String) {
    let Output { status, stdout, stderr } = bin().args(args).output().expect("spawn speakergraph");
    (
        status.code().expect("process exited with a code"),
        String::from_utf8(stdout).expect("utf-8 stdout"),
        String::from_utf8(stderr).expect("utf-8 stderr"),
    )
}

fn run_ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = run(args);
    assert_eq!(code, 0, "command {args:?} failed\nstdout:\n{stdout}\nstderr:\n{stderr}");
    stdout
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Generate a small labeled dataset: 3 scenes × 8 s with 8-dim features.
fn synth_small(dir: &Path) {
    run_ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--scenes",
        "3",
        "--duration",
        "8",
        "--d-visual",
        "8",
        "--d-audio",
        "8",
        "--seed",
        "5",
    ]);
}

const TRAIN_ARGS: &[&str] = &[
    "--epochs",
    "3",
    "--filter-dim",
    "8",
    "--edge-hidden",
    "8",
    "--batch-size",
    "2",
    "--nodes-per-graph",
    "300",
    "--seed",
    "1",
];

#[test]
fn pipeline_synth_train_predict_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    synth_small(&data);

    // Three scene files, one JSON record per line, every record labeled.
    let mut scene_files: Vec<_> = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    scene_files.sort();
    assert_eq!(scene_files.len(), 3, "one .jsonl per scene");
    let first_line = read(&scene_files[0]).lines().next().unwrap().to_string();
    let record: serde_json::Value = serde_json::from_str(&first_line).unwrap();
    assert_eq!(record["visual"].as_array().unwrap().len(), 8);
    assert!(record["label"].is_u64(), "synthetic records carry labels");

    let stats = run_ok(&["ingest", "--input", data.to_str().unwrap()]);
    assert_eq!(stats.lines().count(), 3, "one stats line per stream:\n{stats}");
    for line in stats.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["n_identities"], 2);
        assert!(row["n_records"].as_u64().unwrap() > 0);
    }

    let graphs_out = tmp.path().join("graphs");
    run_ok(&[
        "build-graph",
        "--input",
        data.to_str().unwrap(),
        "--nodes-per-graph",
        "300",
        "--out",
        graphs_out.to_str().unwrap(),
    ]);
    let segments_csv = read(&graphs_out.join("segments.csv"));
    assert!(segments_csv.starts_with("segment_id,"), "header row:\n{segments_csv}");
    assert!(segments_csv.lines().count() > 3, "at least one segment per scene");

    let mut train_args = vec!["train", "--data", data.to_str().unwrap(), "--out"];
    train_args.push(run_dir.to_str().unwrap());
    train_args.extend_from_slice(TRAIN_ARGS);
    let train_out = run_ok(&train_args);
    assert!(
        train_out.contains("artifacts in"),
        "train should report its artifact directory:\n{train_out}"
    );
    for artifact in ["checkpoint.json", "history.csv", "summary.json", "effective_config.toml"] {
        assert!(run_dir.join(artifact).is_file(), "missing artifact {artifact}");
    }
    let history = read(&run_dir.join("history.csv"));
    assert_eq!(history.lines().next(), Some("epoch,lr,train_loss,val_map"));
    assert_eq!(history.lines().count(), 1 + 3, "header plus one row per epoch");
    let summary: serde_json::Value =
        serde_json::from_str(&read(&run_dir.join("summary.json"))).unwrap();
    assert!(summary["n_segments"].as_u64().unwrap() >= 3);
    assert_eq!(summary["trainable_params"], 1827, "8-dim shape has a fixed budget");

    // The echoed effective config must itself be loadable as --config.
    let echoed = run_dir.join("effective_config.toml");
    run_ok(&["param-count", "--config", echoed.to_str().unwrap()]);

    let ckpt = run_dir.join("checkpoint.json");
    let pred_a = tmp.path().join("pred_a");
    let pred_b = tmp.path().join("pred_b");
    for out in [&pred_a, &pred_b] {
        run_ok(&[
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let csv_a = read(&pred_a.join("predictions.csv"));
    let csv_b = read(&pred_b.join("predictions.csv"));
    assert_eq!(csv_a, csv_b, "prediction is deterministic for a fixed checkpoint");
    assert_eq!(csv_a.lines().next(), Some("segment_id,node_index,score,label"));
    // 3 scenes × 8 s × 25 fps × 2 faces = 1200 scored rows.
    assert_eq!(csv_a.lines().count(), 1 + 1200);

    let eval_dir = tmp.path().join("eval");
    let eval_out = run_ok(&[
        "eval",
        "--predictions",
        pred_a.join("predictions.csv").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(eval_out.contains("mAP "), "eval prints the score:\n{eval_out}");
    let eval_json: serde_json::Value =
        serde_json::from_str(&read(&eval_dir.join("eval.json"))).unwrap();
    let map = eval_json["mean_ap"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map), "mAP in range, got {map}");
}

#[test]
fn train_missing_data_path_is_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_dir");
    let (code, _, stderr) = run(&[
        "train",
        "--data",
        missing.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "missing input is a usage error, not a crash");
    assert!(stderr.contains("no_such_dir"), "error names the offending path:\n{stderr}");
}

#[test]
fn predict_rejects_tensor_shape_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    synth_small(&data);
    let mut train_args = vec!["train", "--data", data.to_str().unwrap(), "--out"];
    train_args.push(run_dir.to_str().unwrap());
    train_args.extend_from_slice(TRAIN_ARGS);
    run_ok(&train_args);

    // Corrupt one tensor's recorded shape; loading must fail closed.
    let ckpt_path = run_dir.join("checkpoint.json");
    let mut ckpt: serde_json::Value = serde_json::from_str(&read(&ckpt_path)).unwrap();
    ckpt["tensors"]["sage_mid.weight"]["shape"] = serde_json::json!([3, 8]);
    let doctored = tmp.path().join("doctored.json");
    fs::write(&doctored, serde_json::to_string(&ckpt).unwrap()).unwrap();

    let (code, _, stderr) = run(&[
        "predict",
        "--checkpoint",
        doctored.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("pred").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "shape mismatch is an incompatible-checkpoint error");
    assert!(stderr.contains("sage_mid.weight"), "error names the offending tensor:\n{stderr}");
}

#[test]
fn predict_rejects_feature_width_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let wide = tmp.path().join("wide");
    let run_dir = tmp.path().join("run");
    synth_small(&data);
    run_ok(&[
        "synth",
        "--out",
        wide.to_str().unwrap(),
        "--scenes",
        "1",
        "--duration",
        "4",
        "--d-visual",
        "16",
        "--d-audio",
        "16",
    ]);
    let mut train_args = vec!["train", "--data", data.to_str().unwrap(), "--out"];
    train_args.push(run_dir.to_str().unwrap());
    train_args.extend_from_slice(TRAIN_ARGS);
    run_ok(&train_args);

    let (code, _, stderr) = run(&[
        "predict",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--data",
        wide.to_str().unwrap(),
        "--out",
        tmp.path().join("pred").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "feature width mismatch cannot be scored");
    assert!(stderr.contains("16"), "error reports the offending width:\n{stderr}");
}

#[test]
fn zero_epochs_writes_header_only_history() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    synth_small(&data);
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--epochs",
        "0",
        "--filter-dim",
        "8",
        "--edge-hidden",
        "8",
    ]);
    assert_eq!(read(&run_dir.join("history.csv")), "epoch,lr,train_loss,val_map\n");
    assert!(run_dir.join("checkpoint.json").is_file(), "initial parameters still saved");
}

#[test]
fn sweep_single_value_matches_train_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);

    let train_dir = tmp.path().join("train");
    let mut train_args = vec!["train", "--data", data.to_str().unwrap(), "--out"];
    train_args.push(train_dir.to_str().unwrap());
    train_args.extend_from_slice(TRAIN_ARGS);
    run_ok(&train_args);
    let summary: serde_json::Value =
        serde_json::from_str(&read(&train_dir.join("summary.json"))).unwrap();
    let train_map = summary["best_val_map"].as_f64().expect("train run has a val split");

    let sweep_dir = tmp.path().join("sweep");
    let mut sweep_args = vec![
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--out",
        sweep_dir.to_str().unwrap(),
        "--param",
        "tau",
        "--values",
        "0.9",
    ];
    sweep_args.extend_from_slice(TRAIN_ARGS);
    run_ok(&sweep_args);
    let csv = read(&sweep_dir.join("sweep.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tau,map"));
    let row = lines.next().expect("one row per grid value");
    let (tau, map) = row.split_once(',').unwrap();
    assert_eq!(tau, "0.9");
    let sweep_map: f64 = map.parse().unwrap();
    assert!(
        (sweep_map - train_map).abs() < 1e-12,
        "same data, seed and τ must reproduce the same score: sweep {sweep_map} vs train {train_map}"
    );
}

#[test]
fn eval_tie_policy_changes_ranking() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("predictions.csv");
    // One positive and one negative sharing a score: stable keeps the input
    // order (positive first → AP 1), pessimistic ranks the negative above
    // (AP 1/2).
    fs::write(&csv, "segment_id,node_index,score,label\ng,0,0.5,1\ng,1,0.5,0\n").unwrap();
    let stable = run_ok(&["eval", "--predictions", csv.to_str().unwrap(), "--ties", "stable"]);
    let pessimistic =
        run_ok(&["eval", "--predictions", csv.to_str().unwrap(), "--ties", "pessimistic"]);
    assert!(stable.contains("mAP 1.000000"), "stable order keeps the positive on top:\n{stable}");
    assert!(pessimistic.contains("mAP 0.500000"), "worst-case tie reading:\n{pessimistic}");
}

#[test]
fn eval_requires_labeled_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("predictions.csv");
    fs::write(&csv, "segment_id,node_index,score,label\ng,0,0.5,\n").unwrap();
    let (code, _, stderr) = run(&["eval", "--predictions", csv.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("label"), "error explains what is missing:\n{stderr}");
}

#[test]
fn param_count_reports_fixed_budgets() {
    let stdout = run_ok(&["param-count"]);
    assert!(stdout.contains("trainable_params 112707"), "default budget:\n{stdout}");
    assert!(stdout.contains("millions 0.11"), "rounded to table precision:\n{stdout}");
    assert!(stdout.contains("bytes_f32 450828"), "4 bytes per parameter:\n{stdout}");
    assert!(stdout.contains("megabytes_f32 0.45"), "rounded size:\n{stdout}");

    let wide = run_ok(&["param-count", "--filter-dim", "256"]);
    assert!(wide.contains("trainable_params 941379"), "width-256 budget:\n{wide}");

    let narrow = run_ok(&["param-count", "--filter-dim", "16"]);
    assert!(narrow.contains("trainable_params 20739"), "width-16 budget:\n{narrow}");
}

#[test]
fn check_grad_small_model_passes() {
    let stdout = run_ok(&[
        "check-grad",
        "--segments",
        "2",
        "--min-nodes",
        "6",
        "--max-nodes",
        "10",
        "--filter-dim",
        "4",
        "--edge-hidden",
        "4",
        "--d-visual",
        "5",
        "--d-audio",
        "3",
    ]);
    assert!(stdout.contains("PASS"), "gradient check verdict:\n{stdout}");
    assert!(stdout.contains("sage_mid.weight"), "per-tensor table present:\n{stdout}");
}

#[test]
fn config_file_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[train]\nepochs = 2\nlearning_rate = 0.1\n").unwrap();
    let (code, _, stderr) = run(&["param-count", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "typos in config keys must not be ignored");
    assert!(stderr.contains("learning_rate"), "error names the unknown key:\n{stderr}");
}

#[test]
fn config_file_sets_defaults_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[train]\nepochs = 2\nfilter_dim = 8\nedge_hidden = 8\nbatch_size = 2\nnodes_per_graph = 300\n",
    )
    .unwrap();

    // Epochs from the file...
    let from_file = tmp.path().join("from_file");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        from_file.to_str().unwrap(),
    ]);
    assert_eq!(read(&from_file.join("history.csv")).lines().count(), 1 + 2);

    // ...and the flag wins over the file.
    let from_flag = tmp.path().join("from_flag");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        from_flag.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_eq!(read(&from_flag.join("history.csv")).lines().count(), 1 + 1);
}

#[test]
fn graph_off_flag_lowers_to_single_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    synth_small(&data);
    // --graph false without an explicit --bi-dir must not be rejected: the
    // directed streams are meaningless without edges, so bi_dir lowers too.
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--graph",
        "false",
        "--epochs",
        "1",
        "--filter-dim",
        "8",
        "--edge-hidden",
        "8",
    ]);
    let echoed = read(&run_dir.join("effective_config.toml"));
    assert!(echoed.contains("graph = false"), "ablation recorded:\n{echoed}");
    assert!(echoed.contains("bi_dir = false"), "bi_dir lowered with it:\n{echoed}");
}

#[test]
fn version_reports_package_name() {
    let stdout = run_ok(&["--version"]);
    assert!(
        stdout.starts_with("speakergraph "),
        "version line is 'speakergraph <semver>': {stdout}"
    );
}
